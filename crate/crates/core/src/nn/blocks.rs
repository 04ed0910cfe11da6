//! The composite blocks the architectures are assembled from.

use serde::{Deserialize, Serialize};

use super::graph::{GraphBuilder, LayerGraph, NodeId};
use super::layers::Activation;
use super::{NnError, Tensor};

/// MobileNetV2 inverted residual with linear bottleneck, named like
/// torchvision's `features.i.conv.*`.
pub fn inverted_residual(
    b: &mut GraphBuilder,
    prefix: &str,
    x: NodeId,
    out: usize,
    stride: usize,
    expand_ratio: usize,
) -> NodeId {
    let inp = b.channels(x);
    let hidden = inp * expand_ratio;
    let relu6 = Some(Activation::Relu6);
    let mut h = x;
    let mut j = 0;
    if expand_ratio != 1 {
        h = b.conv_bn_act(&format!("{prefix}.conv.{j}"), h, hidden, 1, 1, 1, relu6);
        j += 1;
    }
    h = b.conv_bn_act(&format!("{prefix}.conv.{j}"), h, hidden, 3, stride, hidden, relu6);
    h = b.conv(format!("{prefix}.conv.{}", j + 1), h, out, 1, 1, 0, 1, false);
    h = b.batch_norm(format!("{prefix}.conv.{}", j + 2), h);
    if stride == 1 && inp == out {
        b.add(x, h)
    } else {
        h
    }
}

/// Squeeze-and-excitation gating: global pool, `fc1`, activation, `fc2`,
/// gate activation, channel-wise rescale of `x`.
pub fn squeeze_excite(
    b: &mut GraphBuilder,
    prefix: &str,
    x: NodeId,
    squeeze: usize,
    act: Activation,
    gate: Activation,
) -> NodeId {
    let c = b.channels(x);
    let p = b.global_avg_pool(x);
    let f1 = b.conv(format!("{prefix}.fc1"), p, squeeze, 1, 1, 0, 1, true);
    let a = b.act(f1, act);
    let f2 = b.conv(format!("{prefix}.fc2"), a, c, 1, 1, 0, 1, true);
    let g = b.act(f2, gate);
    b.channel_scale(x, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeBlockConfig {
    pub kernel: usize,
    pub expanded: usize,
    pub out: usize,
    pub stride: usize,
    pub act: Activation,
    /// Squeeze width, `None` for no squeeze-excite stage.
    pub se_squeeze: Option<usize>,
    pub se_act: Activation,
    pub se_gate: Activation,
}

/// Inverted residual with optional squeeze-excite (MobileNetV3 block and
/// EfficientNet MBConv), named `{prefix}.block.j`.
pub fn inverted_residual_se(b: &mut GraphBuilder, prefix: &str, x: NodeId, cfg: &SeBlockConfig) -> NodeId {
    let inp = b.channels(x);
    let mut h = x;
    let mut j = 0;
    let mut next = || {
        j += 1;
        format!("{prefix}.block.{}", j - 1)
    };
    if cfg.expanded != inp {
        h = b.conv_bn_act(&next(), h, cfg.expanded, 1, 1, 1, Some(cfg.act));
    }
    h = b.conv_bn_act(&next(), h, cfg.expanded, cfg.kernel, cfg.stride, cfg.expanded, Some(cfg.act));
    if let Some(sq) = cfg.se_squeeze {
        h = squeeze_excite(b, &next(), h, sq, cfg.se_act, cfg.se_gate);
    }
    h = b.conv_bn_act(&next(), h, cfg.out, 1, 1, 1, None);
    if cfg.stride == 1 && inp == cfg.out {
        b.add(x, h)
    } else {
        h
    }
}

/// SqueezeNet fire module: 1×1 squeeze then concatenated 1×1 and 3×3 expands.
pub fn fire(b: &mut GraphBuilder, prefix: &str, x: NodeId, squeeze: usize, e1: usize, e3: usize) -> NodeId {
    let s = b.conv(format!("{prefix}.squeeze"), x, squeeze, 1, 1, 0, 1, true);
    let s = b.act(s, Activation::Relu);
    let a = b.conv(format!("{prefix}.expand1x1"), s, e1, 1, 1, 0, 1, true);
    let a = b.act(a, Activation::Relu);
    let c = b.conv(format!("{prefix}.expand3x3"), s, e3, 3, 1, 1, 1, true);
    let c = b.act(c, Activation::Relu);
    b.concat(&[a, c])
}

/// ShuffleNetV2 unit. Stride 1 splits the channels, transforms one half and
/// reshuffles; stride 2 runs both branches on the full input.
pub fn shufflenet_unit(b: &mut GraphBuilder, prefix: &str, x: NodeId, out: usize, stride: usize) -> NodeId {
    let inp = b.channels(x);
    let half = out / 2;
    let relu = Some(Activation::Relu);
    let branch2 = |b: &mut GraphBuilder, src: NodeId| {
        let p = format!("{prefix}.branch2");
        let h = b.conv(format!("{p}.0"), src, half, 1, 1, 0, 1, false);
        let h = b.batch_norm(format!("{p}.1"), h);
        let h = b.act(h, Activation::Relu);
        let h = b.conv(format!("{p}.3"), h, half, 3, stride, 1, half, false);
        let h = b.batch_norm(format!("{p}.4"), h);
        let h = b.conv(format!("{p}.5"), h, half, 1, 1, 0, 1, false);
        let h = b.batch_norm(format!("{p}.6"), h);
        b.act(h, Activation::Relu)
    };
    let cat = if stride == 1 {
        let keep = b.channel_slice(x, 0, inp / 2);
        let rest = b.channel_slice(x, inp / 2, inp - inp / 2);
        let t = branch2(b, rest);
        b.concat(&[keep, t])
    } else {
        let p = format!("{prefix}.branch1");
        let h = b.conv(format!("{p}.0"), x, inp, 3, stride, 1, inp, false);
        let h = b.batch_norm(format!("{p}.1"), h);
        let h = b.conv_bn_act_named(&format!("{p}.2"), &format!("{p}.3"), h, half, relu);
        let t = branch2(b, x);
        b.concat(&[h, t])
    };
    b.channel_shuffle(cat, 2)
}

impl GraphBuilder {
    fn conv_bn_act_named(
        &mut self,
        conv: &str,
        bn: &str,
        x: NodeId,
        out: usize,
        act: Option<Activation>,
    ) -> NodeId {
        let c = self.conv(conv, x, out, 1, 1, 0, 1, false);
        let n = self.batch_norm(bn, c);
        match act {
            Some(a) => self.act(n, a),
            None => n,
        }
    }
}

/// A standalone block, for executing one block in isolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockKind {
    InvertedResidual { in_channels: usize, out: usize, stride: usize, expand_ratio: usize },
    InvertedResidualSe { in_channels: usize, config: SeBlockConfig },
    Fire { in_channels: usize, squeeze: usize, expand1x1: usize, expand3x3: usize },
    ShufflenetUnit { in_channels: usize, out: usize, stride: usize },
}

impl BlockKind {
    /// One-block graph whose parameters are all zero and batch norms identity.
    pub fn graph(&self) -> LayerGraph {
        let cin = match *self {
            BlockKind::InvertedResidual { in_channels, .. }
            | BlockKind::InvertedResidualSe { in_channels, .. }
            | BlockKind::Fire { in_channels, .. }
            | BlockKind::ShufflenetUnit { in_channels, .. } => in_channels,
        };
        let (mut b, x) = GraphBuilder::new(cin);
        match *self {
            BlockKind::InvertedResidual { out, stride, expand_ratio, .. } => {
                inverted_residual(&mut b, "block", x, out, stride, expand_ratio);
            }
            BlockKind::InvertedResidualSe { ref config, .. } => {
                inverted_residual_se(&mut b, "block", x, config);
            }
            BlockKind::Fire { squeeze, expand1x1, expand3x3, .. } => {
                fire(&mut b, "block", x, squeeze, expand1x1, expand3x3);
            }
            BlockKind::ShufflenetUnit { out, stride, .. } => {
                shufflenet_unit(&mut b, "block", x, out, stride);
            }
        }
        b.finish(0)
    }
}

/// Runs one block on `x` with the given parameter tensors (graph order).
pub fn block_forward(kind: &BlockKind, x: &Tensor, params: &[Tensor]) -> Result<Tensor, NnError> {
    let mut g = kind.graph();
    {
        let slots = g.parameters_mut();
        if slots.len() != params.len() {
            return Err(NnError::ShapeMismatch(format!(
                "block takes {} parameter tensors, got {}",
                slots.len(),
                params.len()
            )));
        }
        for (slot, p) in slots.into_iter().zip(params) {
            if slot.shape() != p.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "parameter {:?} where {:?} expected",
                    p.shape(),
                    slot.shape()
                )));
            }
            *slot = p.clone();
        }
    }
    g.forward(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Float;

    fn input(c: usize) -> Tensor {
        Tensor::from_fn(&[1, c, 6, 6], |i| (i as Float * 0.13).sin())
    }

    fn identity_params(kind: &BlockKind) -> Vec<Tensor> {
        // zero weights, batch norm scale 1 / shift 0
        let g = kind.graph();
        let names: Vec<String> = g.parameters().map(|(n, _)| n).collect();
        g.parameters()
            .zip(names)
            .map(|((_, t), n)| {
                if t.rank() == 1 && n.ends_with("weight") {
                    Tensor::full(t.shape(), 1.0)
                } else {
                    Tensor::zeros(t.shape())
                }
            })
            .collect()
    }

    #[test]
    fn zero_residual_branch_is_identity() {
        let kind = BlockKind::InvertedResidual { in_channels: 8, out: 8, stride: 1, expand_ratio: 6 };
        let x = input(8);
        let y = block_forward(&kind, &x, &identity_params(&kind)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn fire_channels() {
        let kind = BlockKind::Fire { in_channels: 96, squeeze: 16, expand1x1: 64, expand3x3: 64 };
        let g = kind.graph();
        let shapes = g.infer_shapes(&[1, 96, 7, 9]).unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![1, 128, 7, 9]);
    }

    #[test]
    fn shuffle_unit_keeps_channels() {
        let kind = BlockKind::ShufflenetUnit { in_channels: 48, out: 48, stride: 1 };
        let shapes = kind.graph().infer_shapes(&[2, 48, 5, 5]).unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![2, 48, 5, 5]);
        let down = BlockKind::ShufflenetUnit { in_channels: 24, out: 48, stride: 2 };
        let shapes = down.graph().infer_shapes(&[2, 24, 8, 8]).unwrap();
        assert_eq!(shapes.last().unwrap(), &vec![2, 48, 4, 4]);
    }

    #[test]
    fn wrong_param_count_rejected() {
        let kind = BlockKind::Fire { in_channels: 4, squeeze: 2, expand1x1: 2, expand3x3: 2 };
        assert!(block_forward(&kind, &input(4), &[]).is_err());
    }
}
