//! Shared oracles and harnesses for the integration tests.
#![allow(dead_code)]

use artzoom::nn::blocks::{fire, inverted_residual, inverted_residual_se, shufflenet_unit, SeBlockConfig};
use artzoom::nn::conv::ConvGeometry;
use artzoom::nn::layers::PoolGeometry;
use artzoom::nn::{mobilenet_v2, Activation, GraphBuilder, LayerGraph, MobileNetV2Config, Mode};
use artzoom::{Float, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| (r.random_range(-1.0..1.0) * scale) as Float)
}

// ---------------------------------------------------------------- conv oracle

/// Direct seven-loop grouped convolution with zero padding.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&Tensor>, g: ConvGeometry) -> Tensor {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cpg, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(cpg * g.groups, cin);
    let oh = (h + 2 * g.padding - kh) / g.stride + 1;
    let ow = (wd + 2 * g.padding - kw) / g.stride + 1;
    let opg = cout / g.groups;
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let (xd, wdat) = (x.data(), w.data());
    let od = out.data_mut();
    for ni in 0..n {
        for co in 0..cout {
            let grp = co / opg;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[co] as f64);
                    for ci in 0..cpg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let c = grp * cpg + ci;
                                let xv = xd[((ni * cin + c) * h + iy as usize) * wd + ix as usize];
                                let wv = wdat[((co * cpg + ci) * kh + ky) * kw + kx];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    od[((ni * cout + co) * oh + oy) * ow + ox] = acc as Float;
                }
            }
        }
    }
    out
}

// ------------------------------------------------------------ gradient checks

pub const FD_EPS: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
/// Finite-difference probes per tensor (all elements when smaller).
const PROBES: usize = 24;

/// Relative error with a floor on the denominator. Structurally zero
/// gradients (e.g. a shift cancelled by a later batch norm) show up as
/// ~1e-10 of rounding noise in the central difference; the floor keeps that
/// noise from reading as a relative error.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

fn objective(g: &LayerGraph, x: &Tensor, r: &Tensor, mode: Mode) -> f64 {
    let t = g.forward_trace(x, mode).unwrap();
    t.output().data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn probes(n: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= PROBES {
        (0..n).collect()
    } else {
        (0..PROBES).map(|_| r.random_range(0..n)).collect()
    }
}

/// Largest relative error between backward() and central differences of
/// `sum(r * forward(x))`, over sampled input and parameter entries.
pub fn max_grad_error(g: &LayerGraph, x: &Tensor, mode: Mode, seed: u64) -> f64 {
    let mut r = rng(seed);
    let t = g.forward_trace(x, mode).unwrap();
    let up = random_tensor(&mut r, t.output().shape(), 1.0);
    let grads = g.backward(&t, &up).unwrap();
    let mut worst = 0.0f64;

    for i in probes(x.numel(), &mut r) {
        let mut xp = x.clone();
        xp.data_mut()[i] += FD_EPS as Float;
        let mut xm = x.clone();
        xm.data_mut()[i] -= FD_EPS as Float;
        let fd = (objective(g, &xp, &up, mode) - objective(g, &xm, &up, mode)) / (2.0 * FD_EPS);
        worst = worst.max(rel_err(grads.input.data()[i] as f64, fd));
    }

    let flat: Vec<Tensor> = grads.flat().into_iter().cloned().collect();
    for (pi, gp) in flat.iter().enumerate() {
        for i in probes(gp.numel(), &mut r) {
            let bump = |delta: f64| {
                let mut h = g.clone();
                h.parameters_mut()[pi].data_mut()[i] += delta as Float;
                objective(&h, x, &up, mode)
            };
            let fd = (bump(FD_EPS) - bump(-FD_EPS)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(gp.data()[i] as f64, fd));
        }
    }
    worst
}

/// Fills every parameter and running mean uniformly in ±1 and running
/// variances in [0.5, 1.5].
pub fn randomise(g: &mut LayerGraph, r: &mut ChaCha8Rng) {
    for (name, t) in g.named_tensors_mut() {
        let var = name.ends_with("running_var");
        for v in t.data_mut() {
            *v = if var { r.random_range(0.5..1.5) } else { r.random_range(-1.0..1.0) } as Float;
        }
    }
}

/// Input whose entries are pairwise at least 0.01 apart, so that max-pool
/// winners and activation kinks are stable under ±1e-5 perturbations.
pub fn separated_input(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ranks.swap(i, r.random_range(0..=i));
    }
    let step = (hi - lo) / n.max(1) as f64;
    Tensor::from_fn(shape, |i| (lo + (ranks[i] as f64 + 0.5) * step + r.random_range(-0.2..0.2) * step) as Float)
}

/// Moves entries that sit within `margin` of any point in `kinks` away from it.
pub fn avoid_kinks(x: &mut Tensor, kinks: &[f64], margin: f64) {
    for v in x.data_mut() {
        for &k in kinks {
            let d = *v as f64 - k;
            if d.abs() < margin {
                *v = (k + margin.copysign(if d == 0.0 { 1.0 } else { d })) as Float;
            }
        }
    }
}

pub struct GradCase {
    pub kind: &'static str,
    pub graph: LayerGraph,
    pub input: Tensor,
    pub mode: Mode,
}

fn finish(b: GraphBuilder, r: &mut ChaCha8Rng) -> LayerGraph {
    let mut g = b.finish(8);
    randomise(&mut g, r);
    g
}

fn pick<T: Copy>(r: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[r.random_range(0..xs.len())]
}

const TRAIN: Mode = Mode::Train { seed: 99 };

/// Random single-layer (or minimal multi-input) graphs for one layer kind.
pub fn grad_cases(kind: &'static str, count: usize, seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.random_range(1..=3);
        let h = r.random_range(3..=7);
        let w = r.random_range(3..=7);
        let (graph, input, mode) = match kind {
            "conv2d" => {
                let groups = pick(&mut r, &[1, 1, 2, 3]);
                let cin = groups * r.random_range(1..=3);
                let cout = groups * r.random_range(1..=3);
                let k = pick(&mut r, &[1, 2, 3]);
                let stride = r.random_range(1..=2);
                let pad = r.random_range(0..=1);
                let bias = r.random_bool(0.5);
                let (mut b, x) = GraphBuilder::new(cin);
                b.conv("conv", x, cout, k, stride, pad, groups, bias);
                (finish(b, &mut r), random_tensor(&mut r, &[n, cin, h, w], 1.0), Mode::Eval)
            }
            "depthwise_conv2d" => {
                let c = r.random_range(1..=5);
                let k = pick(&mut r, &[3, 5]);
                let stride = r.random_range(1..=2);
                let (mut b, x) = GraphBuilder::new(c);
                b.conv("conv", x, c, k, stride, k / 2, c, false);
                (finish(b, &mut r), random_tensor(&mut r, &[n, c, h, w], 1.0), Mode::Eval)
            }
            "batch_norm_train" | "batch_norm_eval" => {
                let c = r.random_range(1..=4);
                let (mut b, x) = GraphBuilder::new(c);
                b.batch_norm("bn", x);
                let n = if kind == "batch_norm_train" { n.max(2) } else { n };
                let mode = if kind == "batch_norm_train" { TRAIN } else { Mode::Eval };
                (finish(b, &mut r), random_tensor(&mut r, &[n, c, h, w], 2.0), mode)
            }
            "relu" | "relu6" | "hard_swish" | "hard_sigmoid" | "silu" | "sigmoid" => {
                let (a, kinks): (Activation, &[f64]) = match kind {
                    "relu" => (Activation::Relu, &[0.0]),
                    "relu6" => (Activation::Relu6, &[0.0, 6.0]),
                    "hard_swish" => (Activation::HardSwish, &[-3.0, 3.0]),
                    "hard_sigmoid" => (Activation::HardSigmoid, &[-3.0, 3.0]),
                    "silu" => (Activation::Silu, &[]),
                    _ => (Activation::Sigmoid, &[]),
                };
                let c = r.random_range(1..=4);
                let (mut b, x) = GraphBuilder::new(c);
                b.act(x, a);
                let mut input = random_tensor(&mut r, &[n, c, h, w], 8.0);
                avoid_kinks(&mut input, kinks, 1e-3);
                (finish(b, &mut r), input, Mode::Eval)
            }
            "max_pool" => {
                let c = r.random_range(1..=3);
                let k = r.random_range(2..=3);
                let geo = PoolGeometry {
                    kernel: k,
                    stride: r.random_range(1..=2),
                    padding: r.random_range(0..=k / 2),
                    ceil_mode: r.random_bool(0.5),
                };
                let (mut b, x) = GraphBuilder::new(c);
                b.max_pool(x, geo.kernel, geo.stride, geo.padding, geo.ceil_mode);
                (finish(b, &mut r), separated_input(&mut r, &[n, c, h, w], -3.0, 3.0), Mode::Eval)
            }
            "global_avg_pool" => {
                let c = r.random_range(1..=5);
                let (mut b, x) = GraphBuilder::new(c);
                b.global_avg_pool(x);
                (finish(b, &mut r), random_tensor(&mut r, &[n, c, h, w], 1.0), Mode::Eval)
            }
            "pool_flatten_linear" => {
                let c = r.random_range(1..=3);
                let (mut b, x) = GraphBuilder::new(c);
                let p = b.global_avg_pool(x);
                let f = b.flatten(p);
                b.linear("fc", f, r.random_range(1..=6), r.random_bool(0.5));
                (finish(b, &mut r), random_tensor(&mut r, &[n, c, h, w], 1.0), Mode::Eval)
            }
            "dropout" => {
                let c = r.random_range(1..=3);
                let (mut b, x) = GraphBuilder::new(c);
                b.dropout(x, pick(&mut r, &[0.2, 0.5]) as Float);
                (finish(b, &mut r), random_tensor(&mut r, &[n, c, h, w], 1.0), TRAIN)
            }
            "add" => {
                let c = r.random_range(1..=4);
                let (mut b, x) = GraphBuilder::new(c);
                let y = b.conv("conv", x, c, 1, 1, 0, 1, false);
                b.add(x, y);
                (finish(b, &mut r), random_tensor(&mut r, &[n, c, h, w], 1.0), Mode::Eval)
            }
            "concat" => {
                let c = r.random_range(1..=3);
                let (mut b, x) = GraphBuilder::new(c);
                let y = b.conv("conv", x, r.random_range(1..=3), 3, 1, 1, 1, true);
                let z = b.act(x, Activation::Sigmoid);
                b.concat(&[x, y, z]);
                (finish(b, &mut r), random_tensor(&mut r, &[n, c, h, w], 1.0), Mode::Eval)
            }
            "channel_scale" => {
                let c = r.random_range(1..=4);
                let (mut b, x) = GraphBuilder::new(c);
                let p = b.global_avg_pool(x);
                let s = b.conv("fc", p, c, 1, 1, 0, 1, true);
                let gate = b.act(s, Activation::Sigmoid);
                b.channel_scale(x, gate);
                (finish(b, &mut r), random_tensor(&mut r, &[n, c, h, w], 1.0), Mode::Eval)
            }
            "channel_shuffle" => {
                let groups = r.random_range(1..=3);
                let c = groups * r.random_range(1..=3);
                let (mut b, x) = GraphBuilder::new(c);
                let y = b.conv("conv", x, c, 1, 1, 0, 1, false);
                b.channel_shuffle(y, groups);
                (finish(b, &mut r), random_tensor(&mut r, &[n, c, h, w], 1.0), Mode::Eval)
            }
            "channel_slice" => {
                let c = r.random_range(2..=6);
                let start = r.random_range(0..c - 1);
                let len = r.random_range(1..=c - start);
                let (mut b, x) = GraphBuilder::new(c);
                let y = b.conv("conv", x, c, 1, 1, 0, 1, true);
                b.channel_slice(y, start, len);
                (finish(b, &mut r), random_tensor(&mut r, &[n, c, h, w], 1.0), Mode::Eval)
            }
            other => panic!("unknown layer kind {other}"),
        };
        out.push(GradCase { kind, graph, input, mode });
    }
    out
}

pub const LAYER_KINDS: [&str; 20] = [
    "conv2d",
    "depthwise_conv2d",
    "batch_norm_train",
    "batch_norm_eval",
    "relu",
    "relu6",
    "hard_swish",
    "hard_sigmoid",
    "silu",
    "sigmoid",
    "max_pool",
    "global_avg_pool",
    "pool_flatten_linear",
    "dropout",
    "add",
    "concat",
    "channel_scale",
    "channel_shuffle",
    "channel_slice",
    "cross_entropy",
];

/// Worst relative error of `cross_entropy`'s logit gradient over `count`
/// random problems.
pub fn cross_entropy_grad_error(count: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..count {
        let n = r.random_range(1..=6);
        let k = r.random_range(2..=12);
        let x = random_tensor(&mut r, &[n, k], 4.0);
        let y: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let (_, g) = artzoom::cross_entropy(&x, &y).unwrap();
        for i in 0..x.numel() {
            let at = |d: f64| {
                let mut t = x.clone();
                t.data_mut()[i] += d as Float;
                artzoom::cross_entropy(&t, &y).unwrap().0
            };
            let fd = (at(FD_EPS) - at(-FD_EPS)) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(g.data()[i] as f64, fd));
        }
    }
    worst
}

/// Worst error over `count` random cases of one layer kind.
pub fn layer_kind_error(kind: &'static str, count: usize, seed: u64) -> f64 {
    if kind == "cross_entropy" {
        return cross_entropy_grad_error(count, seed);
    }
    grad_cases(kind, count, seed)
        .iter()
        .enumerate()
        .map(|(i, c)| max_grad_error(&c.graph, &c.input, c.mode, seed ^ (i as u64 + 1)))
        .fold(0.0, f64::max)
}

/// Composite blocks from the architectures, for end-to-end gradient checks.
pub fn block_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let x4 = |r: &mut ChaCha8Rng, c: usize| random_tensor(r, &[2, c, 6, 6], 1.0);

    let (mut b, x) = GraphBuilder::new(4);
    inverted_residual(&mut b, "ir", x, 4, 1, 3);
    out.push(GradCase { kind: "inverted_residual", graph: finish(b, &mut r), input: x4(&mut r, 4), mode: TRAIN });

    let (mut b, x) = GraphBuilder::new(4);
    let cfg = SeBlockConfig {
        kernel: 3,
        expanded: 8,
        out: 4,
        stride: 1,
        act: Activation::HardSwish,
        se_squeeze: Some(4),
        se_act: Activation::Relu,
        se_gate: Activation::HardSigmoid,
    };
    inverted_residual_se(&mut b, "se", x, &cfg);
    out.push(GradCase { kind: "inverted_residual_se", graph: finish(b, &mut r), input: x4(&mut r, 4), mode: Mode::Eval });

    let (mut b, x) = GraphBuilder::new(6);
    fire(&mut b, "fire", x, 3, 4, 4);
    out.push(GradCase { kind: "fire", graph: finish(b, &mut r), input: x4(&mut r, 6), mode: Mode::Eval });

    for stride in [1, 2] {
        let (mut b, x) = GraphBuilder::new(4);
        shufflenet_unit(&mut b, "unit", x, if stride == 1 { 4 } else { 8 }, stride);
        out.push(GradCase { kind: "shufflenet_unit", graph: finish(b, &mut r), input: x4(&mut r, 4), mode: Mode::Eval });
    }
    out
}

// --------------------------------------------------------------- metrics oracle

/// Brute-force weighted precision / recall / F1 from an explicit confusion
/// matrix, written without reference to the library implementation.
pub fn confusion_prf(truth: &[usize], pred: &[usize], k: usize) -> (f64, f64, f64) {
    let mut cm = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        cm[t][p] += 1;
    }
    let n = truth.len() as f64;
    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for (c, row) in cm.iter().enumerate() {
        let tp = row[c] as f64;
        let support: usize = row.iter().sum();
        let predicted: usize = (0..k).map(|t| cm[t][c]).sum();
        if support == 0 {
            continue;
        }
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let rc = tp / support as f64;
        let f = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        p_sum += support as f64 * p;
        r_sum += support as f64 * rc;
        f_sum += support as f64 * f;
    }
    (p_sum / n, r_sum / n, f_sum / n)
}

/// Fraction of rows whose true label is among the first `k` ranked classes,
/// computed by sorting scores afresh.
pub fn brute_top_k(truth: &[usize], scores: &[Vec<f64>], k: usize) -> f64 {
    let mut hits = 0;
    for (t, s) in truth.iter().zip(scores) {
        let mut idx: Vec<usize> = (0..s.len()).collect();
        idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
        if idx[..k].contains(t) {
            hits += 1;
        }
    }
    hits as f64 / truth.len() as f64
}

// ---------------------------------------------------------------- desk training

/// Width-reduced mobilenet_v2-style network for 32×32 inputs.
pub fn desk_mobilenet(classes: usize) -> LayerGraph {
    let cfg = MobileNetV2Config {
        width_mult: 0.25,
        stages: vec![[1, 16, 1, 1], [6, 24, 2, 2], [6, 32, 2, 2], [6, 64, 1, 2]],
        stem_channels: 32,
        last_channels: 128,
        stem_stride: 1,
        dropout: 0.2,
    };
    mobilenet_v2(&cfg, classes)
}

/// `n` planar 3×`side`×`side` images over `classes` classes. Each class has a
/// distinct oriented stripe pattern and colour bias; samples add random phase,
/// contrast and pixel noise.
pub fn synthetic_images(n: usize, classes: usize, side: usize, seed: u64) -> (Vec<Vec<Float>>, Vec<usize>) {
    let mut r = rng(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let angle = std::f64::consts::PI * c as f64 / classes as f64;
        let (dx, dy) = (angle.cos(), angle.sin());
        let freq = 0.6 + 0.15 * c as f64;
        let phase = r.random_range(0.0..std::f64::consts::TAU);
        let contrast = r.random_range(0.6..1.0);
        let mut img = Vec::with_capacity(3 * side * side);
        for ch in 0..3 {
            let bias = if ch == c % 3 { 0.3 } else { -0.1 };
            for y in 0..side {
                for x in 0..side {
                    let s = (freq * (dx * x as f64 + dy * y as f64) + phase).sin();
                    let noise = r.random_range(-0.3..0.3);
                    img.push((contrast * s + bias + noise) as Float);
                }
            }
        }
        images.push(img);
        labels.push(c);
    }
    (images, labels)
}

pub struct DeskRun {
    /// First epoch (1-based) after which train top-1 reached the target.
    pub reached_at: Option<usize>,
    pub accuracy: Vec<f64>,
    pub losses: Vec<f64>,
    pub seconds: f64,
}

/// Trains [`desk_mobilenet`] on 200 synthetic 32×32 images over 4 classes
/// with AdamW, scoring train top-1 in eval mode after every epoch. Stops
/// early once `target` is reached.
pub fn desk_training(max_epochs: usize, target: f64) -> DeskRun {
    use artzoom::train::{evaluate, InMemorySource, SampleSource};
    use artzoom::{adamw_step, cross_entropy, top_k_accuracy, OptimizerState, PredictionSet, TrainConfig};

    let start = std::time::Instant::now();
    let (images, labels) = synthetic_images(200, 4, 32, 77);
    let source = InMemorySource::new(images, labels, 4, 32).unwrap();
    let cfg = TrainConfig { learning_rate: 2e-3, batch_size: 20, seed: 5, ..TrainConfig::default() };
    let mut g = desk_mobilenet(4);
    g.init_parameters(cfg.seed);
    let mut state = OptimizerState::new(g.parameters().map(|(_, t)| t));
    let ids: Vec<usize> = (0..source.len()).collect();
    let mut run = DeskRun { reached_at: None, accuracy: Vec::new(), losses: Vec::new(), seconds: 0.0 };
    let mut step = 0u64;
    for epoch in 0..max_epochs {
        let mut order = ids.clone();
        rng_shuffle(&mut order, 1000 + epoch as u64);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = source.batch(chunk).unwrap();
            let t = g.forward_train(&x, step).unwrap();
            let (loss, dl) = cross_entropy(t.output(), &y).unwrap();
            let grads = g.backward(&t, &dl).unwrap();
            drop(t);
            adamw_step(&mut g.parameters_mut(), &grads.flat(), &mut state, &cfg).unwrap();
            total += loss * chunk.len() as f64;
            step += 1;
        }
        run.losses.push(total / ids.len() as f64);
        let (truth, logits) = evaluate(&g, &ids, &source, 50).unwrap();
        let acc = top_k_accuracy(&PredictionSet::from_scores(truth, &logits).unwrap(), 1).unwrap();
        run.accuracy.push(acc);
        if acc >= target {
            run.reached_at = Some(epoch + 1);
            break;
        }
    }
    run.seconds = start.elapsed().as_secs_f64();
    run
}

fn rng_shuffle(v: &mut [usize], seed: u64) {
    use rand::seq::SliceRandom;
    v.shuffle(&mut rng(seed));
}

// ---------------------------------------------------------------- metrics oracle run

pub struct OracleSummary {
    pub sets: usize,
    pub mismatches: usize,
    pub recall_not_top1: usize,
}

/// Runs `sets` random problems with K in 2..=40 and N in 1..=500.
pub fn run_oracle(sets: usize, seed: u64) -> OracleSummary {
    let mut r = rng(seed);
    let mut mismatches = 0;
    let mut recall_not_top1 = 0;
    for _ in 0..sets {
        let k = r.random_range(2..=40);
        let n = r.random_range(1..=500);
        // coarse integer scores on some sets so that ties occur
        let coarse = r.random_bool(0.3);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| if coarse { r.random_range(0..4) as f64 } else { r.random::<f64>() }).collect())
            .collect();
        let lib_scores: Vec<Vec<artzoom::Float>> =
            scores.iter().map(|row| row.iter().map(|&v| v as artzoom::Float).collect()).collect();
        let p = artzoom::PredictionSet::from_scores(truth.clone(), &lib_scores).unwrap();

        let mut ok = true;
        for kk in [1, 2, 5.min(k), k] {
            ok &= artzoom::top_k_accuracy(&p, kk).unwrap() == brute_top_k(&truth, &scores, kk);
        }
        let pred: Vec<usize> = scores
            .iter()
            .map(|s| (0..k).fold(0, |best, c| if s[c] > s[best] { c } else { best }))
            .collect();
        let (op, weighted_recall, of) = confusion_prf(&truth, &pred, k);
        let trace = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / n as f64;
        let (lp, lr, lf) = artzoom::weighted_prf(&p).unwrap();
        ok &= lp == op && lf == of && lr == trace;
        ok &= (weighted_recall - lr).abs() < 1e-12;
        if !ok {
            mismatches += 1;
        }
        if lr != artzoom::top_k_accuracy(&p, 1).unwrap() {
            recall_not_top1 += 1;
        }
    }
    OracleSummary { sets, mismatches, recall_not_top1 }
}

// ---------------------------------------------------------------- fold protocol

pub const FULL_SIZE: usize = 24_073;

/// Synthetic manifest with the augmented dataset's sample count spread over
/// 32 classes.
pub fn full_manifest() -> artzoom::DatasetManifest {
    let classes: Vec<String> = (0..32).map(|c| format!("class_{c:02}")).collect();
    artzoom::DatasetManifest::new(
        classes.clone(),
        (0..FULL_SIZE).map(|i| (format!("class_{:02}/img_{i:05}.png", i % 32), classes[i % 32].clone(), None)),
    )
    .unwrap()
}

/// Fold sizes, whether every sample is tested exactly once with disjoint
/// train/test views, and whether a second split is byte-identical.
pub fn protocol_check() -> (Vec<usize>, bool, bool) {
    let m = full_manifest();
    let fa = artzoom::kfold_split(&m, 10, artzoom::dataset::DEFAULT_SPLIT_SEED).unwrap();
    let mut tested = vec![0u32; m.len()];
    let mut ok = true;
    for k in 0..10 {
        let (train, test) = artzoom::fold_views(&m, &fa, k).unwrap();
        ok &= train.len() + test.len() == m.len();
        for &id in &test {
            tested[id] += 1;
        }
        let mut in_test = vec![false; m.len()];
        test.iter().for_each(|&i| in_test[i] = true);
        ok &= train.iter().all(|&i| !in_test[i]);
    }
    ok &= tested.iter().all(|&c| c == 1);
    let again = artzoom::kfold_split(&full_manifest(), 10, artzoom::dataset::DEFAULT_SPLIT_SEED).unwrap();
    let same = again.to_json().unwrap() == fa.to_json().unwrap();
    (fa.fold_sizes(), ok, same)
}
