//! CPU tensor runtime: layers with reverse-mode gradients, layer graphs and
//! the twelve efficient architectures.

mod arch;
pub mod blocks;
pub mod conv;
mod gemm;
pub mod graph;
pub mod layers;
mod tensor;
pub mod weights;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arch::{
    build_architecture, make_divisible, mobilenet_v2, Architecture, ArchitectureSpec, MobileNetV2Config,
    DEFAULT_INIT_SEED, DEFAULT_INPUT_SIDE,
};
pub use blocks::{block_forward, BlockKind};
pub use conv::{conv2d_forward, depthwise_conv2d_forward, ConvGeometry};
pub use graph::{Gradients, GraphBuilder, LayerGraph, Mode, Node, NodeId, Op, Trace};
pub use layers::{channel_shuffle, softmax, Activation};
pub use tensor::Tensor;

#[cfg(not(feature = "f32"))]
pub type Float = f64;
#[cfg(feature = "f32")]
pub type Float = f32;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{channels} channels cannot be split into {groups} groups")]
    IndivisibleChannels { channels: usize, groups: usize },
    #[error("unknown architecture '{name}' (valid: {valid})")]
    UnknownArchitecture { name: String, valid: String },
    #[error("no classification head (final linear or 1x1 convolution) found")]
    HeadNotFound,
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("weight file: {}{detail}", tensor.as_ref().map(|t| format!("tensor '{t}': ")).unwrap_or_default())]
    WeightFormat { tensor: Option<String>, detail: String },
    #[error("weight file is missing tensor '{0}'")]
    MissingTensor(String),
    #[error("weight file has unexpected tensor '{0}'")]
    UnexpectedTensor(String),
    #[error("tensor '{name}' has shape {found:?}, expected {expected:?}")]
    WeightShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl NnError {
    /// Prefixes shape errors with the layer that raised them.
    pub(crate) fn at(self, layer: &str) -> Self {
        match self {
            NnError::ShapeMismatch(m) if !layer.is_empty() => NnError::ShapeMismatch(format!("{layer}: {m}")),
            other => other,
        }
    }
}

/// EfficientNet compound-scaling coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundScale {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub phi: f64,
}

impl CompoundScale {
    pub fn new(alpha: f64, beta: f64, gamma: f64, phi: f64) -> Result<Self, NnError> {
        if !(alpha > 0.0 && beta > 0.0 && gamma > 0.0) || !phi.is_finite() {
            return Err(NnError::InvalidSpec(format!(
                "compound scale needs positive alpha, beta, gamma and finite phi, got ({alpha}, {beta}, {gamma}, {phi})"
            )));
        }
        Ok(Self { alpha, beta, gamma, phi })
    }
}

/// `(depth, width, resolution)` multipliers `(α^φ, β^φ, γ^φ)`.
pub fn compound_scale(cs: &CompoundScale) -> (f64, f64, f64) {
    (cs.alpha.powf(cs.phi), cs.beta.powf(cs.phi), cs.gamma.powf(cs.phi))
}

pub fn param_count(graph: &LayerGraph) -> usize {
    graph.param_count()
}

/// Inference logits `(N, num_classes)`.
pub fn predict(graph: &LayerGraph, batch: &Tensor) -> Result<Tensor, NnError> {
    let (n, c, _, _) = batch.dims4()?;
    if c != graph.in_channels() {
        return Err(NnError::ShapeMismatch(format!("expected {} input channels, got {c}", graph.in_channels())));
    }
    if n == 0 {
        return Ok(Tensor::zeros(&[0, graph.num_classes()]));
    }
    graph.forward(batch)
}

/// The last parameterised node, provided it is a linear layer or a plain 1×1
/// convolution.
pub(crate) fn head_node(graph: &LayerGraph) -> Option<NodeId> {
    let id = graph.nodes().iter().rposition(|n| !n.params.is_empty())?;
    match graph.node(id).op {
        Op::Linear { .. } | Op::Conv2d { kernel: 1, groups: 1, .. } => Some(id),
        _ => None,
    }
}

/// Replaces the classification head with a freshly initialised one of
/// `num_classes` outputs; every other tensor is left untouched.
pub fn finetune_head(mut graph: LayerGraph, num_classes: usize, seed: u64) -> Result<LayerGraph, NnError> {
    if num_classes < 2 {
        return Err(NnError::InvalidSpec(format!("num_classes must be at least 2, got {num_classes}")));
    }
    let id = head_node(&graph).ok_or(NnError::HeadNotFound)?;
    let node = &mut graph.nodes_mut()[id];
    match &mut node.op {
        Op::Linear { out_features, .. } => *out_features = num_classes,
        Op::Conv2d { out_channels, .. } => *out_channels = num_classes,
        _ => unreachable!("head_node only returns linear or 1x1 conv nodes"),
    }
    let mut wshape = node.params[0].shape().to_vec();
    wshape[0] = num_classes;
    node.params[0] = Tensor::zeros(&wshape);
    if node.params.len() > 1 {
        node.params[1] = Tensor::zeros(&[num_classes]);
    }
    graph.reinit_node(id, seed);
    graph.set_num_classes(num_classes);
    Ok(graph)
}
