//! Non-convolutional primitives and their gradients.

use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Mat};
use super::{Float, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Relu6,
    HardSwish,
    HardSigmoid,
    Silu,
    Sigmoid,
}

fn sigmoid(x: Float) -> Float {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    pub fn apply(self, x: Float) -> Float {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Relu6 => x.clamp(0.0, 6.0),
            Activation::HardSwish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
            Activation::HardSigmoid => (x + 3.0).clamp(0.0, 6.0) / 6.0,
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at `x` (one-sided conventions at kinks follow PyTorch).
    pub fn derivative(self, x: Float) -> Float {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Relu6 => {
                if x > 0.0 && x < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::HardSwish => {
                if x < -3.0 {
                    0.0
                } else if x <= 3.0 {
                    x / 3.0 + 0.5
                } else {
                    1.0
                }
            }
            Activation::HardSigmoid => {
                if x > -3.0 && x < 3.0 {
                    1.0 / 6.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| self.apply(v)).collect())
            .expect("shape")
    }

    pub fn backward(self, x: &Tensor, grad_out: &Tensor) -> Tensor {
        let data = x.data().iter().zip(grad_out.data()).map(|(&v, &g)| g * self.derivative(v));
        Tensor::new(x.shape().to_vec(), data.collect()).expect("shape")
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    Activation::Relu.forward(x)
}

pub fn relu6(x: &Tensor) -> Tensor {
    Activation::Relu6.forward(x)
}

pub fn hard_swish(x: &Tensor) -> Tensor {
    Activation::HardSwish.forward(x)
}

pub fn hard_sigmoid(x: &Tensor) -> Tensor {
    Activation::HardSigmoid.forward(x)
}

pub fn silu(x: &Tensor) -> Tensor {
    Activation::Silu.forward(x)
}

/// Per-channel statistics of a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<Float>,
    /// Biased variance over `(N, H, W)`.
    pub var: Vec<Float>,
    pub inv_std: Vec<Float>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

fn channel_planes(x: &Tensor) -> Result<(usize, usize, usize), NnError> {
    let (n, c, h, w) = x.dims4()?;
    Ok((n, c, h * w))
}

/// Inference-form batch norm: `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn batchnorm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: Float,
) -> Result<Tensor, NnError> {
    let (n, c, hw) = channel_planes(x)?;
    check_channel_vec(c, &[gamma, beta, mean, var])?;
    let mut out = x.clone();
    for ni in 0..n {
        for ci in 0..c {
            let scale = gamma.data()[ci] / (var.data()[ci] + eps).sqrt();
            let shift = beta.data()[ci] - mean.data()[ci] * scale;
            let s = (ni * c + ci) * hw;
            out.data_mut()[s..s + hw].iter_mut().for_each(|v| *v = *v * scale + shift);
        }
    }
    Ok(out)
}

fn check_channel_vec(c: usize, ts: &[&Tensor]) -> Result<(), NnError> {
    for t in ts {
        if t.shape() != [c] {
            return Err(NnError::ShapeMismatch(format!(
                "batch-norm vector {:?} for {c} channels",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Training-form batch norm using batch statistics.
pub fn batchnorm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: Float,
) -> Result<(Tensor, BatchStats), NnError> {
    let (n, c, hw) = channel_planes(x)?;
    check_channel_vec(c, &[gamma, beta])?;
    let count = n * hw;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let mut s = 0.0;
        for ni in 0..n {
            let o = (ni * c + ci) * hw;
            s += x.data()[o..o + hw].iter().sum::<Float>();
        }
        let m = if count > 0 { s / count as Float } else { 0.0 };
        let mut v = 0.0;
        for ni in 0..n {
            let o = (ni * c + ci) * hw;
            v += x.data()[o..o + hw].iter().map(|&t| (t - m) * (t - m)).sum::<Float>();
        }
        mean[ci] = m;
        var[ci] = if count > 0 { v / count as Float } else { 0.0 };
    }
    let inv_std: Vec<Float> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut out = x.clone();
    for ni in 0..n {
        for ci in 0..c {
            let o = (ni * c + ci) * hw;
            let (g, b, m, is) = (gamma.data()[ci], beta.data()[ci], mean[ci], inv_std[ci]);
            out.data_mut()[o..o + hw].iter_mut().for_each(|v| *v = g * (*v - m) * is + b);
        }
    }
    Ok((out, BatchStats { mean, var, inv_std, count }))
}

pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Gradients of [`batchnorm_train`] (statistics depend on the input).
pub fn batchnorm_train_backward(
    x: &Tensor,
    gamma: &Tensor,
    stats: &BatchStats,
    grad_out: &Tensor,
) -> Result<BatchNormGrads, NnError> {
    let (n, c, hw) = channel_planes(x)?;
    let m = stats.count as Float;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ci in 0..c {
        let (mu, is) = (stats.mean[ci], stats.inv_std[ci]);
        let (mut sum_g, mut sum_gx) = (0.0, 0.0);
        for ni in 0..n {
            let o = (ni * c + ci) * hw;
            for (xv, gv) in x.data()[o..o + hw].iter().zip(&grad_out.data()[o..o + hw]) {
                sum_g += gv;
                sum_gx += gv * (xv - mu) * is;
            }
        }
        dbeta[ci] = sum_g;
        dgamma[ci] = sum_gx;
        let k = gamma.data()[ci] * is / m;
        for ni in 0..n {
            let o = (ni * c + ci) * hw;
            for i in o..o + hw {
                let xhat = (x.data()[i] - mu) * is;
                dx.data_mut()[i] = k * (m * grad_out.data()[i] - sum_g - xhat * sum_gx);
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::new(vec![c], dgamma)?,
        beta: Tensor::new(vec![c], dbeta)?,
    })
}

/// Gradients of [`batchnorm_eval`] (fixed statistics: a per-channel affine map).
pub fn batchnorm_eval_backward(
    x: &Tensor,
    gamma: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: Float,
    grad_out: &Tensor,
) -> Result<BatchNormGrads, NnError> {
    let (n, c, hw) = channel_planes(x)?;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ci in 0..c {
        let is = 1.0 / (var.data()[ci] + eps).sqrt();
        let scale = gamma.data()[ci] * is;
        for ni in 0..n {
            let o = (ni * c + ci) * hw;
            for i in o..o + hw {
                let g = grad_out.data()[i];
                dx.data_mut()[i] = g * scale;
                dgamma[ci] += g * (x.data()[i] - mean.data()[ci]) * is;
                dbeta[ci] += g;
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::new(vec![c], dgamma)?,
        beta: Tensor::new(vec![c], dbeta)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub ceil_mode: bool,
}

/// Pooled extent along one axis, PyTorch rules (a ceil-mode window must
/// start inside the input or left padding).
pub fn pool_out_len(len: usize, g: PoolGeometry) -> Option<usize> {
    let padded = len + 2 * g.padding;
    if padded < g.kernel || g.stride == 0 {
        return None;
    }
    let span = padded - g.kernel;
    let mut out = if g.ceil_mode { span.div_ceil(g.stride) + 1 } else { span / g.stride + 1 };
    if g.ceil_mode && (out - 1) * g.stride >= len + g.padding {
        out -= 1;
    }
    Some(out)
}

/// Max pooling; also returns the flat input index of each maximum.
pub fn max_pool(x: &Tensor, g: PoolGeometry) -> Result<(Tensor, Vec<u32>), NnError> {
    let (n, c, h, w) = x.dims4()?;
    let (Some(oh), Some(ow)) = (pool_out_len(h, g), pool_out_len(w, g)) else {
        return Err(NnError::ShapeMismatch(format!("pool window {} exceeds {h}x{w}", g.kernel)));
    };
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = Float::NEG_INFINITY;
                let mut arg = base;
                for ky in 0..g.kernel {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..g.kernel {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let i = base + iy as usize * w + ix as usize;
                        if x.data()[i] > best {
                            best = x.data()[i];
                            arg = i;
                        }
                    }
                }
                out.push(best);
                idx.push(arg as u32);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, idx))
}

pub fn max_pool_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        dx.data_mut()[i as usize] += g;
    }
    dx
}

/// `(N, C, H, W)` → `(N, C, 1, 1)` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor, NnError> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let data = x.data().chunks(hw.max(1)).take(n * c).map(|p| p.iter().sum::<Float>() / hw as Float);
    Tensor::new(vec![n, c, 1, 1], data.collect())
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let hw: usize = input_shape[2..].iter().product();
    let mut dx = Tensor::zeros(input_shape);
    for (plane, g) in dx.data_mut().chunks_mut(hw.max(1)).zip(grad_out.data()) {
        plane.iter_mut().for_each(|v| *v = g / hw as Float);
    }
    dx
}

/// `y = x Wᵀ + b` with `x: (N, in)`, `W: (out, in)`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor, NnError> {
    let (n, fin) = x.dims2()?;
    let (fout, win) = w.dims2()?;
    if fin != win {
        return Err(NnError::ShapeMismatch(format!("linear {win}->{fout} fed {fin} features")));
    }
    let mut out = vec![0.0; n * fout];
    if let Some(b) = b {
        if b.shape() != [fout] {
            return Err(NnError::ShapeMismatch(format!("bias {:?} for {fout} outputs", b.shape())));
        }
        for row in out.chunks_mut(fout) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(Mat::new(x.data(), n, fin), Mat::new(w.data(), fout, fin).t(), 1.0, &mut out);
    Tensor::new(vec![n, fout], out)
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    has_bias: bool,
    grad_out: &Tensor,
) -> Result<LinearGrads, NnError> {
    let (n, fin) = x.dims2()?;
    let (fout, _) = w.dims2()?;
    let mut dx = vec![0.0; n * fin];
    gemm(Mat::new(grad_out.data(), n, fout), Mat::new(w.data(), fout, fin), 0.0, &mut dx);
    let mut dw = vec![0.0; fout * fin];
    gemm(Mat::new(grad_out.data(), n, fout).t(), Mat::new(x.data(), n, fin), 0.0, &mut dw);
    let bias = has_bias.then(|| {
        let mut db = vec![0.0; fout];
        for row in grad_out.data().chunks(fout) {
            db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
        }
        Tensor::new(vec![fout], db).expect("shape")
    });
    Ok(LinearGrads {
        input: Tensor::new(vec![n, fin], dx)?,
        weight: Tensor::new(vec![fout, fin], dw)?,
        bias,
    })
}

/// Channel permutation used by [`channel_shuffle`]: output channel `i`
/// reads input channel `perm[i]`.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>, NnError> {
    if groups == 0 || channels % groups != 0 {
        return Err(NnError::IndivisibleChannels { channels, groups });
    }
    let per = channels / groups;
    // view as (groups, per), transpose to (per, groups), flatten
    Ok((0..channels).map(|i| (i % groups) * per + i / groups).collect())
}

pub fn channel_shuffle(x: &Tensor, groups: usize) -> Result<Tensor, NnError> {
    let (_, c, _, _) = x.dims4()?;
    let perm = shuffle_permutation(c, groups)?;
    Ok(permute_channels(x, &perm))
}

/// Output channel `i` = input channel `perm[i]`.
pub fn permute_channels(x: &Tensor, perm: &[usize]) -> Tensor {
    let (n, c, h, w) = x.dims4().expect("rank 4");
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    for ni in 0..n {
        for (o, &i) in perm.iter().enumerate() {
            let src = (ni * c + i) * hw;
            let dst = (ni * c + o) * hw;
            out.data_mut()[dst..dst + hw].copy_from_slice(&x.data()[src..src + hw]);
        }
    }
    out
}

pub fn channel_shuffle_backward(grad_out: &Tensor, groups: usize) -> Result<Tensor, NnError> {
    let (_, c, _, _) = grad_out.dims4()?;
    let perm = shuffle_permutation(c, groups)?;
    let mut inverse = vec![0; c];
    for (o, &i) in perm.iter().enumerate() {
        inverse[i] = o;
    }
    Ok(permute_channels(grad_out, &inverse))
}

/// Channels `start..start+len`.
pub fn channel_slice(x: &Tensor, start: usize, len: usize) -> Result<Tensor, NnError> {
    let (n, c, h, w) = x.dims4()?;
    if start + len > c {
        return Err(NnError::ShapeMismatch(format!("slice {start}+{len} of {c} channels")));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * len * hw);
    for ni in 0..n {
        let s = (ni * c + start) * hw;
        data.extend_from_slice(&x.data()[s..s + len * hw]);
    }
    Tensor::new(vec![n, len, h, w], data)
}

pub fn channel_slice_backward(input_shape: &[usize], start: usize, grad_out: &Tensor) -> Tensor {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let len = grad_out.shape()[1];
    let hw = h * w;
    let mut dx = Tensor::zeros(input_shape);
    for ni in 0..n {
        let d = (ni * c + start) * hw;
        let s = ni * len * hw;
        dx.data_mut()[d..d + len * hw].copy_from_slice(&grad_out.data()[s..s + len * hw]);
    }
    dx
}

/// Concatenation along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor, NnError> {
    let (n, _, h, w) = parts
        .first()
        .ok_or_else(|| NnError::ShapeMismatch("empty concat".into()))?
        .dims4()?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(NnError::ShapeMismatch(format!(
                "concat of {:?} with {:?}",
                p.shape(),
                parts[0].shape()
            )));
        }
        total += pc;
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * total * hw);
    for ni in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            data.extend_from_slice(&p.data()[ni * pc * hw..(ni + 1) * pc * hw]);
        }
    }
    Tensor::new(vec![n, total, h, w], data)
}

/// `x * gate` with `gate: (N, C, 1, 1)` broadcast over space.
pub fn channel_scale(x: &Tensor, gate: &Tensor) -> Result<Tensor, NnError> {
    let (n, c, h, w) = x.dims4()?;
    if gate.shape() != [n, c, 1, 1] {
        return Err(NnError::ShapeMismatch(format!("gate {:?} for {:?}", gate.shape(), x.shape())));
    }
    let hw = h * w;
    let mut out = x.clone();
    for (plane, g) in out.data_mut().chunks_mut(hw.max(1)).zip(gate.data()) {
        plane.iter_mut().for_each(|v| *v *= g);
    }
    Ok(out)
}

pub fn channel_scale_backward(x: &Tensor, gate: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    let hw: usize = x.shape()[2..].iter().product();
    let mut dx = grad_out.clone();
    let mut dgate = Tensor::zeros(gate.shape());
    for (i, g) in gate.data().iter().enumerate() {
        let s = i * hw;
        let mut acc = 0.0;
        for j in s..s + hw {
            acc += grad_out.data()[j] * x.data()[j];
            dx.data_mut()[j] *= g;
        }
        dgate.data_mut()[i] = acc;
    }
    (dx, dgate)
}

/// Row-wise softmax of a `(N, K)` tensor, max-shifted.
pub fn softmax(x: &Tensor) -> Result<Tensor, NnError> {
    let (_, k) = x.dims2()?;
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(k.max(1)) {
        let m = row.iter().copied().fold(Float::NEG_INFINITY, Float::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(out)
}
