//! Feed-forward layer graphs: construction, execution, reverse-mode
//! differentiation and shape inference.

use rand::Rng;

use super::conv::{conv2d_backward, conv2d_forward, conv_out_len, ConvGeometry};
use super::layers::{self, Activation, BatchStats, PoolGeometry};
use super::{Float, NnError, Tensor};
use crate::rng;

pub const BN_EPS: Float = 1e-5;
pub const BN_MOMENTUM: Float = 0.1;

/// Index of a node inside its graph.
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input { channels: usize },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    },
    BatchNorm { channels: usize, eps: Float, momentum: Float },
    Act(Activation),
    MaxPool(PoolGeometry),
    GlobalAvgPool,
    Flatten,
    Linear { in_features: usize, out_features: usize, bias: bool },
    Dropout { p: Float },
    Add,
    Concat,
    /// `inputs[0] * inputs[1]` with the second broadcast over space.
    ChannelScale,
    ChannelShuffle { groups: usize },
    ChannelSlice { start: usize, len: usize },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm",
            Op::Act(_) => "activation",
            Op::MaxPool(_) => "max_pool",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Flatten => "flatten",
            Op::Linear { .. } => "linear",
            Op::Dropout { .. } => "dropout",
            Op::Add => "add",
            Op::Concat => "concat",
            Op::ChannelScale => "channel_scale",
            Op::ChannelShuffle { .. } => "channel_shuffle",
            Op::ChannelSlice { .. } => "channel_slice",
        }
    }

    fn param_suffixes(&self) -> &'static [&'static str] {
        match self {
            Op::Conv2d { bias: true, .. } | Op::Linear { bias: true, .. } | Op::BatchNorm { .. } => {
                &["weight", "bias"]
            }
            Op::Conv2d { .. } | Op::Linear { .. } => &["weight"],
            _ => &[],
        }
    }

    fn buffer_suffixes(&self) -> &'static [&'static str] {
        match self {
            Op::BatchNorm { .. } => &["running_mean", "running_var"],
            _ => &[],
        }
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Op::Conv2d { in_channels, out_channels, kernel, groups, bias, .. } => {
                let mut v = vec![vec![out_channels, in_channels / groups, kernel, kernel]];
                if bias {
                    v.push(vec![out_channels]);
                }
                v
            }
            Op::Linear { in_features, out_features, bias } => {
                let mut v = vec![vec![out_features, in_features]];
                if bias {
                    v.push(vec![out_features]);
                }
                v
            }
            Op::BatchNorm { channels, .. } => vec![vec![channels]; 2],
            _ => Vec::new(),
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Input { .. } => Some(0),
            Op::Add | Op::ChannelScale => Some(2),
            Op::Concat => None,
            _ => Some(1),
        }
    }

    /// Output shape given input shapes.
    pub fn out_shape(&self, ins: &[&[usize]]) -> Result<Vec<usize>, NnError> {
        let mismatch = |what: String| Err(NnError::ShapeMismatch(what));
        if let Some(a) = self.arity() {
            if ins.len() != a {
                return mismatch(format!("{} expects {a} inputs, got {}", self.kind(), ins.len()));
            }
        }
        let rank4 = |s: &[usize]| -> Result<(usize, usize, usize, usize), NnError> {
            match *s {
                [n, c, h, w] => Ok((n, c, h, w)),
                _ => Err(NnError::ShapeMismatch(format!("expected rank-4 input, got {s:?}"))),
            }
        };
        match *self {
            Op::Input { .. } => unreachable!("input nodes are not evaluated"),
            Op::Conv2d { in_channels, out_channels, kernel, stride, padding, groups, .. } => {
                let (n, c, h, w) = rank4(ins[0])?;
                if c != in_channels {
                    return mismatch(format!("conv expects {in_channels} channels, got {c}"));
                }
                if groups == 0 || c % groups != 0 || out_channels % groups != 0 {
                    return Err(NnError::IndivisibleChannels { channels: c, groups });
                }
                match (conv_out_len(h, kernel, stride, padding), conv_out_len(w, kernel, stride, padding)) {
                    (Some(oh), Some(ow)) => Ok(vec![n, out_channels, oh, ow]),
                    _ => mismatch(format!("{kernel}x{kernel} kernel does not fit {h}x{w}")),
                }
            }
            Op::BatchNorm { channels, .. } => {
                let (_, c, _, _) = rank4(ins[0])?;
                if c != channels {
                    return mismatch(format!("batch norm over {channels} channels fed {c}"));
                }
                Ok(ins[0].to_vec())
            }
            Op::Act(_) | Op::Dropout { .. } => Ok(ins[0].to_vec()),
            Op::MaxPool(g) => {
                let (n, c, h, w) = rank4(ins[0])?;
                match (layers::pool_out_len(h, g), layers::pool_out_len(w, g)) {
                    (Some(oh), Some(ow)) => Ok(vec![n, c, oh, ow]),
                    _ => mismatch(format!("pool window {} does not fit {h}x{w}", g.kernel)),
                }
            }
            Op::GlobalAvgPool => {
                let (n, c, _, _) = rank4(ins[0])?;
                Ok(vec![n, c, 1, 1])
            }
            Op::Flatten => {
                let s = ins[0];
                if s.is_empty() {
                    return mismatch("flatten of a scalar".into());
                }
                Ok(vec![s[0], s[1..].iter().product()])
            }
            Op::Linear { in_features, out_features, .. } => match *ins[0] {
                [n, f] if f == in_features => Ok(vec![n, out_features]),
                _ => mismatch(format!("linear expects (N, {in_features}), got {:?}", ins[0])),
            },
            Op::Add => {
                if ins[0] != ins[1] {
                    return mismatch(format!("add of {:?} and {:?}", ins[0], ins[1]));
                }
                Ok(ins[0].to_vec())
            }
            Op::Concat => {
                let (n, _, h, w) = rank4(ins.first().copied().unwrap_or(&[]))?;
                let mut c = 0;
                for s in ins {
                    let (sn, sc, sh, sw) = rank4(s)?;
                    if (sn, sh, sw) != (n, h, w) {
                        return mismatch(format!("concat of {s:?} with {:?}", ins[0]));
                    }
                    c += sc;
                }
                Ok(vec![n, c, h, w])
            }
            Op::ChannelScale => {
                let (n, c, _, _) = rank4(ins[0])?;
                if ins[1] != [n, c, 1, 1] {
                    return mismatch(format!("gate {:?} for {:?}", ins[1], ins[0]));
                }
                Ok(ins[0].to_vec())
            }
            Op::ChannelShuffle { groups } => {
                let (_, c, _, _) = rank4(ins[0])?;
                if groups == 0 || c % groups != 0 {
                    return Err(NnError::IndivisibleChannels { channels: c, groups });
                }
                Ok(ins[0].to_vec())
            }
            Op::ChannelSlice { start, len } => {
                let (n, c, h, w) = rank4(ins[0])?;
                if start + len > c {
                    return mismatch(format!("slice {start}+{len} of {c} channels"));
                }
                Ok(vec![n, len, h, w])
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    /// Module path used to name this node's tensors; empty for parameterless nodes.
    pub name: String,
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub params: Vec<Tensor>,
    pub buffers: Vec<Tensor>,
}

impl Node {
    pub fn param_names(&self) -> impl Iterator<Item = String> + '_ {
        self.op.param_suffixes().iter().map(move |s| format!("{}.{s}", self.name))
    }

    pub fn buffer_names(&self) -> impl Iterator<Item = String> + '_ {
        self.op.buffer_suffixes().iter().map(move |s| format!("{}.{s}", self.name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Eval,
    /// Batch-statistics normalisation and dropout masks drawn from `seed`.
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Bn(BatchStats),
    Argmax(Vec<u32>),
    Mask(Vec<Float>),
}

/// Activations and per-node state retained by a forward pass for backward.
#[derive(Debug, Clone)]
pub struct Trace {
    values: Vec<Tensor>,
    aux: Vec<Aux>,
    mode: Mode,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("non-empty graph")
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    pub fn into_output(mut self) -> Tensor {
        self.values.pop().expect("non-empty graph")
    }
}

/// Gradients of every parameter (aligned with [`LayerGraph::parameters`]) and
/// of the graph input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Vec<Tensor>>,
    pub input: Tensor,
}

impl Gradients {
    pub fn flat(&self) -> Vec<&Tensor> {
        self.params.iter().flatten().collect()
    }
}

#[derive(Debug, Clone)]
pub struct LayerGraph {
    nodes: Vec<Node>,
    input_side: usize,
    num_classes: usize,
}

impl LayerGraph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn in_channels(&self) -> usize {
        match self.nodes[0].op {
            Op::Input { channels } => channels,
            _ => unreachable!("graphs start with an input node"),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn output(&self) -> NodeId {
        self.nodes.len() - 1
    }

    /// `(name, tensor)` for every trainable tensor, in graph order.
    pub fn parameters(&self) -> impl Iterator<Item = (String, &Tensor)> + '_ {
        self.nodes.iter().flat_map(|n| n.param_names().zip(n.params.iter()))
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.nodes.iter_mut().flat_map(|n| n.params.iter_mut()).collect()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (String, &Tensor)> + '_ {
        self.nodes.iter().flat_map(|n| n.buffer_names().zip(n.buffers.iter()))
    }

    /// Parameters then buffers, node by node.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for n in &self.nodes {
            out.extend(n.param_names().zip(n.params.iter()));
            out.extend(n.buffer_names().zip(n.buffers.iter()));
        }
        out
    }

    /// Mutable counterpart of [`named_tensors`](Self::named_tensors).
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for n in &mut self.nodes {
            let pn: Vec<String> = n.param_names().collect();
            let bn: Vec<String> = n.buffer_names().collect();
            out.extend(pn.into_iter().zip(n.params.iter_mut()));
            out.extend(bn.into_iter().zip(n.buffers.iter_mut()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().map(|(_, t)| t.numel()).sum()
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [Node] {
        &mut self.nodes
    }

    pub(crate) fn set_num_classes(&mut self, k: usize) {
        self.num_classes = k;
    }

    /// Shape of every node for a given input shape.
    pub fn infer_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let s = match node.op {
                Op::Input { channels } => {
                    if input.len() != 4 || input[1] != channels {
                        return Err(NnError::ShapeMismatch(format!(
                            "graph input expects (N, {channels}, H, W), got {input:?}"
                        )));
                    }
                    input.to_vec()
                }
                _ => {
                    let ins: Vec<&[usize]> = node.inputs.iter().map(|&i| shapes[i].as_slice()).collect();
                    node.op.out_shape(&ins).map_err(|e| e.at(&node.name))?
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    /// Parameter shapes each node requires, checked against its tensors.
    pub fn validate_params(&self) -> Result<(), NnError> {
        for n in &self.nodes {
            for ((name, t), want) in n.param_names().zip(&n.params).zip(n.op.param_shapes()) {
                if t.shape() != want.as_slice() {
                    return Err(NnError::WeightShape { name, expected: want, found: t.shape().to_vec() });
                }
            }
        }
        Ok(())
    }

    /// Inference forward pass; intermediate activations are dropped as soon as
    /// their last consumer has run.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.infer_shapes(x.shape())?;
        let last = self.output();
        let mut last_use = vec![0; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for &j in &n.inputs {
                last_use[j] = i;
            }
        }
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let out = if i == 0 {
                x.clone()
            } else {
                let ins: Vec<&Tensor> =
                    node.inputs.iter().map(|&j| values[j].as_ref().expect("live input")).collect();
                self.eval_node(i, &ins, Mode::Eval)?.0
            };
            values[i] = Some(out);
            for &j in &node.inputs {
                if last_use[j] == i && j != last {
                    values[j] = None;
                }
            }
        }
        Ok(values.pop().flatten().expect("output"))
    }

    /// Forward pass retaining every activation for [`Self::backward`].
    pub fn forward_trace(&self, x: &Tensor, mode: Mode) -> Result<Trace, NnError> {
        self.infer_shapes(x.shape())?;
        let mut values = Vec::with_capacity(self.nodes.len());
        let mut aux = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let (v, a) = if i == 0 {
                (x.clone(), Aux::None)
            } else {
                let ins: Vec<&Tensor> = node.inputs.iter().map(|&j| &values[j]).collect();
                self.eval_node(i, &ins, mode)?
            };
            values.push(v);
            aux.push(a);
        }
        Ok(Trace { values, aux, mode })
    }

    /// Training forward pass: like [`Self::forward_trace`] in train mode, then
    /// folds the batch statistics into the running estimates.
    pub fn forward_train(&mut self, x: &Tensor, seed: u64) -> Result<Trace, NnError> {
        let trace = self.forward_trace(x, Mode::Train { seed })?;
        for (node, aux) in self.nodes.iter_mut().zip(&trace.aux) {
            if let (Op::BatchNorm { momentum, .. }, Aux::Bn(stats)) = (&node.op, aux) {
                let unbias = if stats.count > 1 {
                    stats.count as Float / (stats.count - 1) as Float
                } else {
                    1.0
                };
                let (mean, var) = node.buffers.split_at_mut(1);
                for c in 0..stats.mean.len() {
                    let rm = &mut mean[0].data_mut()[c];
                    *rm = (1.0 - momentum) * *rm + momentum * stats.mean[c];
                    let rv = &mut var[0].data_mut()[c];
                    *rv = (1.0 - momentum) * *rv + momentum * stats.var[c] * unbias;
                }
            }
        }
        Ok(trace)
    }

    fn eval_node(&self, i: NodeId, ins: &[&Tensor], mode: Mode) -> Result<(Tensor, Aux), NnError> {
        let node = &self.nodes[i];
        let ctx = |e: NnError| e.at(&node.name);
        let x = ins[0];
        let plain = |t: Tensor| (t, Aux::None);
        Ok(match node.op {
            Op::Input { .. } => unreachable!(),
            Op::Conv2d { stride, padding, groups, .. } => plain(
                conv2d_forward(x, &node.params[0], node.params.get(1), ConvGeometry::new(stride, padding, groups))
                    .map_err(ctx)?,
            ),
            Op::BatchNorm { eps, .. } => {
                let (g, b) = (&node.params[0], &node.params[1]);
                match mode {
                    Mode::Eval => plain(
                        layers::batchnorm_eval(x, g, b, &node.buffers[0], &node.buffers[1], eps).map_err(ctx)?,
                    ),
                    Mode::Train { .. } => {
                        let (y, stats) = layers::batchnorm_train(x, g, b, eps).map_err(ctx)?;
                        (y, Aux::Bn(stats))
                    }
                }
            }
            Op::Act(a) => plain(a.forward(x)),
            Op::MaxPool(g) => {
                let (y, idx) = layers::max_pool(x, g).map_err(ctx)?;
                (y, Aux::Argmax(idx))
            }
            Op::GlobalAvgPool => plain(layers::global_avg_pool(x).map_err(ctx)?),
            Op::Flatten => {
                let s = x.shape();
                plain(x.clone().reshape(&[s[0], s[1..].iter().product()])?)
            }
            Op::Linear { .. } => plain(layers::linear(x, &node.params[0], node.params.get(1)).map_err(ctx)?),
            Op::Dropout { p } => match mode {
                Mode::Eval => plain(x.clone()),
                Mode::Train { seed } => {
                    let mut r = rng::stream(seed, i as u64);
                    let keep = 1.0 / (1.0 - p);
                    let mask: Vec<Float> = (0..x.numel())
                        .map(|_| if (r.random::<f64>() as Float) < p { 0.0 } else { keep })
                        .collect();
                    let mut y = x.clone();
                    y.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    (y, Aux::Mask(mask))
                }
            },
            Op::Add => {
                let mut y = x.clone();
                y.add_assign(ins[1]);
                plain(y)
            }
            Op::Concat => plain(layers::concat_channels(ins).map_err(ctx)?),
            Op::ChannelScale => plain(layers::channel_scale(x, ins[1]).map_err(ctx)?),
            Op::ChannelShuffle { groups } => plain(layers::channel_shuffle(x, groups).map_err(ctx)?),
            Op::ChannelSlice { start, len } => plain(layers::channel_slice(x, start, len).map_err(ctx)?),
        })
    }

    /// Reverse-mode gradients of `sum(output * grad_out)`.
    pub fn backward(&self, trace: &Trace, grad_out: &Tensor) -> Result<Gradients, NnError> {
        let n = self.nodes.len();
        if trace.values.len() != n {
            return Err(NnError::ShapeMismatch("trace does not belong to this graph".into()));
        }
        if grad_out.shape() != trace.output().shape() {
            return Err(NnError::ShapeMismatch(format!(
                "upstream gradient {:?} for output {:?}",
                grad_out.shape(),
                trace.output().shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[n - 1] = Some(grad_out.clone());
        let mut pgrads: Vec<Vec<Tensor>> =
            self.nodes.iter().map(|nd| nd.params.iter().map(|p| Tensor::zeros(p.shape())).collect()).collect();
        let train = matches!(trace.mode, Mode::Train { .. });
        for i in (1..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let ctx = |e: NnError| e.at(&node.name);
            let x = &trace.values[node.inputs[0]];
            let input_grads: Vec<Tensor> = match node.op {
                Op::Input { .. } => unreachable!(),
                Op::Conv2d { stride, padding, groups, bias, .. } => {
                    let cg = conv2d_backward(x, &node.params[0], bias, ConvGeometry::new(stride, padding, groups), &g)
                        .map_err(ctx)?;
                    pgrads[i][0] = cg.weight;
                    if let Some(b) = cg.bias {
                        pgrads[i][1] = b;
                    }
                    vec![cg.input]
                }
                Op::BatchNorm { eps, .. } => {
                    let bg = match (&trace.aux[i], train) {
                        (Aux::Bn(stats), true) => {
                            layers::batchnorm_train_backward(x, &node.params[0], stats, &g).map_err(ctx)?
                        }
                        _ => layers::batchnorm_eval_backward(
                            x,
                            &node.params[0],
                            &node.buffers[0],
                            &node.buffers[1],
                            eps,
                            &g,
                        )
                        .map_err(ctx)?,
                    };
                    pgrads[i][0] = bg.gamma;
                    pgrads[i][1] = bg.beta;
                    vec![bg.input]
                }
                Op::Act(a) => vec![a.backward(x, &g)],
                Op::MaxPool(_) => match &trace.aux[i] {
                    Aux::Argmax(idx) => vec![layers::max_pool_backward(x.shape(), idx, &g)],
                    _ => unreachable!("max pool records its argmax"),
                },
                Op::GlobalAvgPool => vec![layers::global_avg_pool_backward(x.shape(), &g)],
                Op::Flatten => vec![g.reshape(x.shape())?],
                Op::Linear { bias, .. } => {
                    let lg = layers::linear_backward(x, &node.params[0], bias, &g).map_err(ctx)?;
                    pgrads[i][0] = lg.weight;
                    if let Some(b) = lg.bias {
                        pgrads[i][1] = b;
                    }
                    vec![lg.input]
                }
                Op::Dropout { .. } => match &trace.aux[i] {
                    Aux::Mask(mask) => {
                        let mut d = g;
                        d.data_mut().iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
                        vec![d]
                    }
                    _ => vec![g],
                },
                Op::Add => vec![g.clone(), g],
                Op::Concat => {
                    let mut start = 0;
                    let mut parts = Vec::with_capacity(node.inputs.len());
                    for &j in &node.inputs {
                        let c = trace.values[j].shape()[1];
                        parts.push(layers::channel_slice(&g, start, c)?);
                        start += c;
                    }
                    parts
                }
                Op::ChannelScale => {
                    let (dx, dgate) = layers::channel_scale_backward(x, &trace.values[node.inputs[1]], &g);
                    vec![dx, dgate]
                }
                Op::ChannelShuffle { groups } => vec![layers::channel_shuffle_backward(&g, groups).map_err(ctx)?],
                Op::ChannelSlice { start, .. } => vec![layers::channel_slice_backward(x.shape(), start, &g)],
            };
            for (&j, dg) in node.inputs.iter().zip(input_grads) {
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&dg),
                    slot @ None => *slot = Some(dg),
                }
            }
        }
        let input = grads[0].take().unwrap_or_else(|| Tensor::zeros(trace.values[0].shape()));
        Ok(Gradients { params: pgrads, input })
    }

    /// Re-draws every parameter: convolutions and linear layers Kaiming-uniform
    /// over fan-in, biases uniform in ±1/√fan_in, batch norm reset to identity.
    pub fn init_parameters(&mut self, seed: u64) {
        for (i, node) in self.nodes.iter_mut().enumerate() {
            init_node(node, seed, i as u64);
        }
    }

    pub(crate) fn reinit_node(&mut self, id: NodeId, seed: u64) {
        init_node(&mut self.nodes[id], seed, id as u64);
    }
}

fn init_node(node: &mut Node, seed: u64, stream: u64) {
    let mut r = rng::stream(seed, stream);
    match node.op {
        Op::Conv2d { .. } | Op::Linear { .. } => {
            let w = &node.params[0];
            let fan_in = (w.numel() / w.shape()[0]).max(1) as f64;
            let gain = if matches!(node.op, Op::Linear { .. }) { 1.0 } else { 6.0f64.sqrt() };
            let wb = gain / fan_in.sqrt();
            let bb = 1.0 / fan_in.sqrt();
            for v in node.params[0].data_mut() {
                *v = rng::uniform_symmetric(&mut r, wb) as Float;
            }
            if let Some(b) = node.params.get_mut(1) {
                for v in b.data_mut() {
                    *v = rng::uniform_symmetric(&mut r, bb) as Float;
                }
            }
        }
        Op::BatchNorm { .. } => {
            node.params[0].data_mut().fill(1.0);
            node.params[1].data_mut().fill(0.0);
            node.buffers[0].data_mut().fill(0.0);
            node.buffers[1].data_mut().fill(1.0);
        }
        _ => {}
    }
}

/// Incremental graph construction with torchvision-style module paths.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    channels: Vec<usize>,
    bn: (Float, Float),
}

impl GraphBuilder {
    /// A builder holding only the input node (id 0).
    pub fn new(in_channels: usize) -> (Self, NodeId) {
        let input = Node {
            name: String::new(),
            op: Op::Input { channels: in_channels },
            inputs: Vec::new(),
            params: Vec::new(),
            buffers: Vec::new(),
        };
        (Self { nodes: vec![input], channels: vec![in_channels], bn: (BN_EPS, BN_MOMENTUM) }, 0)
    }

    /// Epsilon and running-stat momentum of subsequently added batch norms.
    pub fn with_batch_norm(mut self, eps: Float, momentum: Float) -> Self {
        self.bn = (eps, momentum);
        self
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.channels[id]
    }

    fn push(&mut self, name: impl Into<String>, op: Op, inputs: Vec<NodeId>, channels: usize) -> NodeId {
        let params = op.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        let buffers = match op {
            Op::BatchNorm { channels, .. } => vec![Tensor::zeros(&[channels]), Tensor::full(&[channels], 1.0)],
            _ => Vec::new(),
        };
        self.nodes.push(Node { name: name.into(), op, inputs, params, buffers });
        self.channels.push(channels);
        self.nodes.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: impl Into<String>,
        x: NodeId,
        out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> NodeId {
        let op = Op::Conv2d {
            in_channels: self.channels[x],
            out_channels: out,
            kernel,
            stride,
            padding,
            groups,
            bias,
        };
        self.push(name, op, vec![x], out)
    }

    pub fn batch_norm(&mut self, name: impl Into<String>, x: NodeId) -> NodeId {
        let c = self.channels[x];
        let (eps, momentum) = self.bn;
        self.push(name, Op::BatchNorm { channels: c, eps, momentum }, vec![x], c)
    }

    pub fn act(&mut self, x: NodeId, a: Activation) -> NodeId {
        self.push("", Op::Act(a), vec![x], self.channels[x])
    }

    /// `{prefix}.0` bias-free conv with "same" padding, `{prefix}.1` batch
    /// norm, then the optional activation.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_bn_act(
        &mut self,
        prefix: &str,
        x: NodeId,
        out: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        act: Option<Activation>,
    ) -> NodeId {
        let c = self.conv(format!("{prefix}.0"), x, out, kernel, stride, (kernel - 1) / 2, groups, false);
        let b = self.batch_norm(format!("{prefix}.1"), c);
        match act {
            Some(a) => self.act(b, a),
            None => b,
        }
    }

    pub fn max_pool(&mut self, x: NodeId, kernel: usize, stride: usize, padding: usize, ceil_mode: bool) -> NodeId {
        let g = PoolGeometry { kernel, stride, padding, ceil_mode };
        self.push("", Op::MaxPool(g), vec![x], self.channels[x])
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        self.push("", Op::GlobalAvgPool, vec![x], self.channels[x])
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        self.push("", Op::Flatten, vec![x], self.channels[x])
    }

    pub fn linear(&mut self, name: impl Into<String>, x: NodeId, out: usize, bias: bool) -> NodeId {
        let op = Op::Linear { in_features: self.channels[x], out_features: out, bias };
        self.push(name, op, vec![x], out)
    }

    pub fn dropout(&mut self, x: NodeId, p: Float) -> NodeId {
        self.push("", Op::Dropout { p }, vec![x], self.channels[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push("", Op::Add, vec![a, b], self.channels[a])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let c = parts.iter().map(|&p| self.channels[p]).sum();
        self.push("", Op::Concat, parts.to_vec(), c)
    }

    pub fn channel_scale(&mut self, x: NodeId, gate: NodeId) -> NodeId {
        self.push("", Op::ChannelScale, vec![x, gate], self.channels[x])
    }

    pub fn channel_shuffle(&mut self, x: NodeId, groups: usize) -> NodeId {
        self.push("", Op::ChannelShuffle { groups }, vec![x], self.channels[x])
    }

    pub fn channel_slice(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        self.push("", Op::ChannelSlice { start, len }, vec![x], len)
    }

    /// Freezes the graph; the last node added is the output.
    pub fn finish(self, input_side: usize) -> LayerGraph {
        let num_classes = *self.channels.last().expect("input node");
        LayerGraph { nodes: self.nodes, input_side, num_classes }
    }
}
