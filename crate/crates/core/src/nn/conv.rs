//! 2-D convolution (cross-correlation) kernels: grouped im2col + GEMM, a
//! direct depthwise path, and their reverse-mode gradients.
//!
//! Batch elements are processed in parallel; weight gradients are reduced
//! over fixed-size sample chunks in a fixed order so results do not depend on
//! the number of worker threads.

use rayon::prelude::*;

use super::gemm::{gemm, Mat};
use super::{Float, NnError, Tensor};

const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self { stride, padding, groups }
    }
}

/// Output extent along one axis, `floor((len + 2p - k) / s) + 1`.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Dims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    groups: usize,
    stride: usize,
    pad: usize,
}

impl Dims {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }
    fn ohw(&self) -> usize {
        self.oh * self.ow
    }
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
    fn depthwise(&self) -> bool {
        self.groups == self.cin && self.cin == self.cout
    }
}

fn dims(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, g: ConvGeometry) -> Result<Dims, NnError> {
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, cin_g, kh, kw) = w.dims4()?;
    if g.groups == 0 || cin % g.groups != 0 || cout % g.groups != 0 {
        return Err(NnError::ShapeMismatch(format!(
            "channels {cin}->{cout} not divisible by groups {}",
            g.groups
        )));
    }
    if cin_g * g.groups != cin {
        return Err(NnError::ShapeMismatch(format!(
            "weight expects {} input channels per group, input has {cin} over {} groups",
            cin_g, g.groups
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(NnError::ShapeMismatch(format!("bias {:?} for {cout} outputs", b.shape())));
        }
    }
    let oh = conv_out_len(h, kh, g.stride, g.padding);
    let ow = conv_out_len(wd, kw, g.stride, g.padding);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(NnError::ShapeMismatch(format!(
            "kernel {kh}x{kw} stride {} larger than padded input {h}x{wd}",
            g.stride
        )));
    };
    Ok(Dims { n, cin, h, w: wd, cout, kh, kw, oh, ow, groups: g.groups, stride: g.stride, pad: g.padding })
}

fn im2col(x: &[Float], d: &Dims, cols: &mut [Float]) {
    let ohw = d.ohw();
    for ci in 0..d.cin_g() {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (ci * d.kh + ky) * d.kw + kx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    let out_row = &mut dst[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.h as isize {
                        out_row.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        *v = if ix < 0 || ix >= d.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[Float], d: &Dims, x: &mut [Float]) {
    let ohw = d.ohw();
    for ci in 0..d.cin_g() {
        let plane = &mut x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (ci * d.kh + ky) * d.kw + kx;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                    for ox in 0..d.ow {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * d.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Grouped 2-D convolution. Dispatches to the depthwise kernel when every
/// group holds exactly one input and one output channel.
pub fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    geom: ConvGeometry,
) -> Result<Tensor, NnError> {
    let d = dims(x, weight, bias, geom)?;
    if d.depthwise() {
        return Ok(depthwise_forward(x, weight, bias, &d));
    }
    Ok(im2col_forward(x, weight, bias, &d))
}

/// Grouped convolution that always goes through im2col + GEMM.
pub fn conv2d_forward_im2col(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    geom: ConvGeometry,
) -> Result<Tensor, NnError> {
    let d = dims(x, weight, bias, geom)?;
    Ok(im2col_forward(x, weight, bias, &d))
}

/// Depthwise convolution: one `k×k` filter per channel, no channel mixing.
/// `weight` has shape `(C, 1, k, k)`.
pub fn depthwise_conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, NnError> {
    let c = x.dims4()?.1;
    let d = dims(x, weight, None, ConvGeometry::new(stride, padding, c))?;
    if !d.depthwise() {
        return Err(NnError::ShapeMismatch(format!(
            "depthwise weight {:?} does not match {c} channels",
            weight.shape()
        )));
    }
    Ok(depthwise_forward(x, weight, None, &d))
}

fn im2col_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, d: &Dims) -> Tensor {
    let (ohw, k, cin_g, cout_g) = (d.ohw(), d.k(), d.cin_g(), d.cout_g());
    let in_per = d.cin * d.h * d.w;
    let out_per = d.cout * ohw;
    let mut out = vec![0.0; d.n * out_per];
    if out_per == 0 {
        return Tensor::new(vec![d.n, d.cout, d.oh, d.ow], out).expect("shape");
    }
    out.par_chunks_mut(out_per).enumerate().for_each(|(n, out_n)| {
        let x_n = &x.data()[n * in_per..(n + 1) * in_per];
        let mut cols = if d.pointwise() { Vec::new() } else { vec![0.0; k * ohw] };
        for g in 0..d.groups {
            let x_g = &x_n[g * cin_g * d.h * d.w..(g + 1) * cin_g * d.h * d.w];
            let cols_ref: &[Float] = if d.pointwise() {
                x_g
            } else {
                im2col(x_g, d, &mut cols);
                &cols
            };
            let w_g = &weight.data()[g * cout_g * k..(g + 1) * cout_g * k];
            let o_g = &mut out_n[g * cout_g * ohw..(g + 1) * cout_g * ohw];
            gemm(Mat::new(w_g, cout_g, k), Mat::new(cols_ref, k, ohw), 0.0, o_g);
        }
        if let Some(b) = bias {
            for (co, plane) in out_n.chunks_mut(ohw).enumerate() {
                plane.iter_mut().for_each(|v| *v += b.data()[co]);
            }
        }
    });
    Tensor::new(vec![d.n, d.cout, d.oh, d.ow], out).expect("shape")
}

fn depthwise_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, d: &Dims) -> Tensor {
    let (hw, ohw, kk) = (d.h * d.w, d.ohw(), d.kh * d.kw);
    let mut out = vec![0.0; d.n * d.cout * ohw];
    if ohw == 0 {
        return Tensor::new(vec![d.n, d.cout, d.oh, d.ow], out).expect("shape");
    }
    out.par_chunks_mut(ohw).enumerate().for_each(|(nc, o)| {
        let c = nc % d.cin;
        let plane = &x.data()[nc * hw..(nc + 1) * hw];
        let k = &weight.data()[c * kk..(c + 1) * kk];
        let b = bias.map_or(0.0, |b| b.data()[c]);
        o.iter_mut().for_each(|v| *v = b);
        for ky in 0..d.kh {
            for oy in 0..d.oh {
                let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                if iy < 0 || iy >= d.h as isize {
                    continue;
                }
                let src = &plane[iy as usize * d.w..(iy as usize + 1) * d.w];
                let dst = &mut o[oy * d.ow..(oy + 1) * d.ow];
                for kx in 0..d.kw {
                    let wv = k[ky * d.kw + kx];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            *v += wv * src[ix as usize];
                        }
                    }
                }
            }
        }
    });
    Tensor::new(vec![d.n, d.cout, d.oh, d.ow], out).expect("shape")
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Gradients of a convolution with respect to its input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    has_bias: bool,
    geom: ConvGeometry,
    grad_out: &Tensor,
) -> Result<ConvGrads, NnError> {
    let d = dims(x, weight, None, geom)?;
    if grad_out.shape() != [d.n, d.cout, d.oh, d.ow] {
        return Err(NnError::ShapeMismatch(format!(
            "upstream gradient {:?} for output {:?}",
            grad_out.shape(),
            [d.n, d.cout, d.oh, d.ow]
        )));
    }
    let (input, weight_grad) = if d.depthwise() {
        depthwise_backward(x, weight, grad_out, &d)
    } else {
        im2col_backward(x, weight, grad_out, &d)
    };
    let bias = has_bias.then(|| {
        let ohw = d.ohw();
        let mut b = vec![0.0; d.cout];
        for n in 0..d.n {
            for (co, bv) in b.iter_mut().enumerate() {
                let s = (n * d.cout + co) * ohw;
                *bv += grad_out.data()[s..s + ohw].iter().sum::<Float>();
            }
        }
        Tensor::new(vec![d.cout], b).expect("shape")
    });
    Ok(ConvGrads { input, weight: weight_grad, bias })
}

fn im2col_backward(x: &Tensor, weight: &Tensor, go: &Tensor, d: &Dims) -> (Tensor, Tensor) {
    let (ohw, k, cin_g, cout_g) = (d.ohw(), d.k(), d.cin_g(), d.cout_g());
    let in_per = d.cin * d.h * d.w;
    let out_per = d.cout * ohw;

    let mut dx = vec![0.0; d.n * in_per];
    if in_per > 0 {
        dx.par_chunks_mut(in_per).enumerate().for_each(|(n, dx_n)| {
            let go_n = &go.data()[n * out_per..(n + 1) * out_per];
            let mut dcols = vec![0.0; k * ohw];
            for g in 0..d.groups {
                let w_g = &weight.data()[g * cout_g * k..(g + 1) * cout_g * k];
                let go_g = &go_n[g * cout_g * ohw..(g + 1) * cout_g * ohw];
                let dx_g = &mut dx_n[g * cin_g * d.h * d.w..(g + 1) * cin_g * d.h * d.w];
                if d.pointwise() {
                    gemm(Mat::new(w_g, cout_g, k).t(), Mat::new(go_g, cout_g, ohw), 0.0, dx_g);
                } else {
                    gemm(Mat::new(w_g, cout_g, k).t(), Mat::new(go_g, cout_g, ohw), 0.0, &mut dcols);
                    col2im(&dcols, d, dx_g);
                }
            }
        });
    }

    let wn = weight.numel();
    let partials: Vec<Vec<Float>> = (0..d.n.div_ceil(GRAD_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut dw = vec![0.0; wn];
            let mut cols = if d.pointwise() { Vec::new() } else { vec![0.0; k * ohw] };
            for n in chunk * GRAD_CHUNK..((chunk + 1) * GRAD_CHUNK).min(d.n) {
                let x_n = &x.data()[n * in_per..(n + 1) * in_per];
                let go_n = &go.data()[n * out_per..(n + 1) * out_per];
                for g in 0..d.groups {
                    let x_g = &x_n[g * cin_g * d.h * d.w..(g + 1) * cin_g * d.h * d.w];
                    let cols_ref: &[Float] = if d.pointwise() {
                        x_g
                    } else {
                        im2col(x_g, d, &mut cols);
                        &cols
                    };
                    let go_g = &go_n[g * cout_g * ohw..(g + 1) * cout_g * ohw];
                    let dw_g = &mut dw[g * cout_g * k..(g + 1) * cout_g * k];
                    gemm(Mat::new(go_g, cout_g, ohw), Mat::new(cols_ref, k, ohw).t(), 1.0, dw_g);
                }
            }
            dw
        })
        .collect();
    (
        Tensor::new(x.shape().to_vec(), dx).expect("shape"),
        Tensor::new(weight.shape().to_vec(), reduce(partials, wn)).expect("shape"),
    )
}

fn reduce(partials: Vec<Vec<Float>>, len: usize) -> Vec<Float> {
    let mut acc = vec![0.0; len];
    for p in partials {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

fn depthwise_backward(x: &Tensor, weight: &Tensor, go: &Tensor, d: &Dims) -> (Tensor, Tensor) {
    let (hw, ohw, kk) = (d.h * d.w, d.ohw(), d.kh * d.kw);
    let mut dx = vec![0.0; d.n * d.cin * hw];
    let mut dw_parts = vec![0.0; d.n * d.cin * kk];
    if hw > 0 {
        dx.par_chunks_mut(hw).zip(dw_parts.par_chunks_mut(kk)).enumerate().for_each(
            |(nc, (dx_p, dw_p))| {
                let c = nc % d.cin;
                let plane = &x.data()[nc * hw..(nc + 1) * hw];
                let g = &go.data()[nc * ohw..(nc + 1) * ohw];
                let k = &weight.data()[c * kk..(c + 1) * kk];
                for ky in 0..d.kh {
                    for oy in 0..d.oh {
                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let row = iy as usize * d.w;
                        for kx in 0..d.kw {
                            let wv = k[ky * d.kw + kx];
                            let mut acc = 0.0;
                            for ox in 0..d.ow {
                                let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                if ix >= 0 && ix < d.w as isize {
                                    let gv = g[oy * d.ow + ox];
                                    dx_p[row + ix as usize] += wv * gv;
                                    acc += gv * plane[row + ix as usize];
                                }
                            }
                            dw_p[ky * d.kw + kx] += acc;
                        }
                    }
                }
            },
        );
    }
    let mut dw = vec![0.0; d.cin * kk];
    for n in 0..d.n {
        for (a, v) in dw.iter_mut().zip(&dw_parts[n * d.cin * kk..(n + 1) * d.cin * kk]) {
            *a += v;
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("shape"),
        Tensor::new(weight.shape().to_vec(), dw).expect("shape"),
    )
}
