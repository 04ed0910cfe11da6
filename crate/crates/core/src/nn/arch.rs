//! Builders for the twelve architectures. Topologies and tensor names follow
//! the torchvision reference implementations, so state dicts exported from
//! torchvision map onto these graphs one-to-one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::blocks::{fire, inverted_residual, inverted_residual_se, shufflenet_unit, SeBlockConfig};
use super::graph::{GraphBuilder, LayerGraph};
use super::layers::Activation;
use super::{Float, NnError};

pub const DEFAULT_INPUT_SIDE: usize = 224;
pub const DEFAULT_INIT_SEED: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "efficientnet-b0")]
    EfficientNetB0,
    #[serde(rename = "efficientnet-b1")]
    EfficientNetB1,
    #[serde(rename = "efficientnet-b2")]
    EfficientNetB2,
    #[serde(rename = "mobilenet_v2")]
    MobileNetV2,
    #[serde(rename = "mobilenet_v3_small")]
    MobileNetV3Small,
    #[serde(rename = "mobilenet_v3_large")]
    MobileNetV3Large,
    #[serde(rename = "shufflenet_v2_x0_5")]
    ShuffleNetV2x0_5,
    #[serde(rename = "shufflenet_v2_x1_0")]
    ShuffleNetV2x1_0,
    #[serde(rename = "shufflenet_v2_x1_5")]
    ShuffleNetV2x1_5,
    #[serde(rename = "shufflenet_v2_x2_0")]
    ShuffleNetV2x2_0,
    #[serde(rename = "squeezenet1_0")]
    SqueezeNet1_0,
    #[serde(rename = "squeezenet1_1")]
    SqueezeNet1_1,
}

impl Architecture {
    pub const ALL: [Architecture; 12] = [
        Architecture::EfficientNetB0,
        Architecture::EfficientNetB1,
        Architecture::EfficientNetB2,
        Architecture::MobileNetV2,
        Architecture::MobileNetV3Small,
        Architecture::MobileNetV3Large,
        Architecture::ShuffleNetV2x0_5,
        Architecture::ShuffleNetV2x1_0,
        Architecture::ShuffleNetV2x1_5,
        Architecture::ShuffleNetV2x2_0,
        Architecture::SqueezeNet1_0,
        Architecture::SqueezeNet1_1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::EfficientNetB0 => "efficientnet-b0",
            Architecture::EfficientNetB1 => "efficientnet-b1",
            Architecture::EfficientNetB2 => "efficientnet-b2",
            Architecture::MobileNetV2 => "mobilenet_v2",
            Architecture::MobileNetV3Small => "mobilenet_v3_small",
            Architecture::MobileNetV3Large => "mobilenet_v3_large",
            Architecture::ShuffleNetV2x0_5 => "shufflenet_v2_x0_5",
            Architecture::ShuffleNetV2x1_0 => "shufflenet_v2_x1_0",
            Architecture::ShuffleNetV2x1_5 => "shufflenet_v2_x1_5",
            Architecture::ShuffleNetV2x2_0 => "shufflenet_v2_x2_0",
            Architecture::SqueezeNet1_0 => "squeezenet1_0",
            Architecture::SqueezeNet1_1 => "squeezenet1_1",
        }
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|a| a.name()).collect()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace("efficientnet_", "efficientnet-");
        Self::ALL
            .into_iter()
            .find(|a| a.name() == norm)
            .ok_or_else(|| NnError::UnknownArchitecture { name: s.to_string(), valid: Self::names().join(", ") })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub architecture: Architecture,
    pub num_classes: usize,
}

impl ArchitectureSpec {
    pub fn new(architecture: Architecture, num_classes: usize) -> Result<Self, NnError> {
        if num_classes < 2 {
            return Err(NnError::InvalidSpec(format!("num_classes must be at least 2, got {num_classes}")));
        }
        Ok(Self { architecture, num_classes })
    }

    pub fn parse(name: &str, num_classes: usize) -> Result<Self, NnError> {
        Self::new(name.parse()?, num_classes)
    }
}

/// Builds the named architecture with a `num_classes` head and weights drawn
/// from [`DEFAULT_INIT_SEED`].
pub fn build_architecture(spec: &ArchitectureSpec) -> Result<LayerGraph, NnError> {
    let k = spec.num_classes;
    if k < 2 {
        return Err(NnError::InvalidSpec(format!("num_classes must be at least 2, got {k}")));
    }
    let mut g = match spec.architecture {
        Architecture::MobileNetV2 => mobilenet_v2(&MobileNetV2Config::default(), k),
        Architecture::MobileNetV3Small => mobilenet_v3(false, k),
        Architecture::MobileNetV3Large => mobilenet_v3(true, k),
        Architecture::ShuffleNetV2x0_5 => shufflenet_v2([24, 48, 96, 192, 1024], k),
        Architecture::ShuffleNetV2x1_0 => shufflenet_v2([24, 116, 232, 464, 1024], k),
        Architecture::ShuffleNetV2x1_5 => shufflenet_v2([24, 176, 352, 704, 1024], k),
        Architecture::ShuffleNetV2x2_0 => shufflenet_v2([24, 244, 488, 976, 2048], k),
        Architecture::SqueezeNet1_0 => squeezenet(false, k),
        Architecture::SqueezeNet1_1 => squeezenet(true, k),
        Architecture::EfficientNetB0 => efficientnet(1.0, 1.0, 0.2, k),
        Architecture::EfficientNetB1 => efficientnet(1.0, 1.1, 0.2, k),
        Architecture::EfficientNetB2 => efficientnet(1.1, 1.2, 0.3, k),
    };
    g.init_parameters(DEFAULT_INIT_SEED);
    Ok(g)
}

/// Rounds `v` to a multiple of `divisor`, never dropping more than 10%.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut new = ((v + d / 2.0) as usize / divisor * divisor).max(divisor);
    if (new as f64) < 0.9 * v {
        new += divisor;
    }
    new
}

/// MobileNetV2 hyperparameters. Defaults are the published ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobileNetV2Config {
    pub width_mult: f64,
    /// `[expansion t, channels c, repeats n, first stride s]` per stage.
    pub stages: Vec<[usize; 4]>,
    pub stem_channels: usize,
    pub last_channels: usize,
    pub stem_stride: usize,
    pub dropout: Float,
}

impl Default for MobileNetV2Config {
    fn default() -> Self {
        Self {
            width_mult: 1.0,
            stages: vec![
                [1, 16, 1, 1],
                [6, 24, 2, 2],
                [6, 32, 3, 2],
                [6, 64, 4, 2],
                [6, 96, 3, 1],
                [6, 160, 3, 2],
                [6, 320, 1, 1],
            ],
            stem_channels: 32,
            last_channels: 1280,
            stem_stride: 2,
            dropout: 0.2,
        }
    }
}

pub fn mobilenet_v2(cfg: &MobileNetV2Config, num_classes: usize) -> LayerGraph {
    let relu6 = Some(Activation::Relu6);
    let (mut b, x) = GraphBuilder::new(3);
    let stem = make_divisible(cfg.stem_channels as f64 * cfg.width_mult, 8);
    let last = make_divisible(cfg.last_channels as f64 * cfg.width_mult.max(1.0), 8);
    let mut h = b.conv_bn_act("features.0", x, stem, 3, cfg.stem_stride, 1, relu6);
    let mut i = 1;
    for &[t, c, n, s] in &cfg.stages {
        let out = make_divisible(c as f64 * cfg.width_mult, 8);
        for r in 0..n {
            let stride = if r == 0 { s } else { 1 };
            h = inverted_residual(&mut b, &format!("features.{i}"), h, out, stride, t);
            i += 1;
        }
    }
    h = b.conv_bn_act(&format!("features.{i}"), h, last, 1, 1, 1, relu6);
    let p = b.global_avg_pool(h);
    let f = b.flatten(p);
    let d = b.dropout(f, cfg.dropout);
    b.linear("classifier.1", d, num_classes, true);
    b.finish(DEFAULT_INPUT_SIDE)
}

// (in, kernel, expanded, out, squeeze-excite, hard-swish, stride)
type V3Row = (usize, usize, usize, usize, bool, bool, usize);

const V3_SMALL: [V3Row; 11] = [
    (16, 3, 16, 16, true, false, 2),
    (16, 3, 72, 24, false, false, 2),
    (24, 3, 88, 24, false, false, 1),
    (24, 5, 96, 40, true, true, 2),
    (40, 5, 240, 40, true, true, 1),
    (40, 5, 240, 40, true, true, 1),
    (40, 5, 120, 48, true, true, 1),
    (48, 5, 144, 48, true, true, 1),
    (48, 5, 288, 96, true, true, 2),
    (96, 5, 576, 96, true, true, 1),
    (96, 5, 576, 96, true, true, 1),
];

const V3_LARGE: [V3Row; 15] = [
    (16, 3, 16, 16, false, false, 1),
    (16, 3, 64, 24, false, false, 2),
    (24, 3, 72, 24, false, false, 1),
    (24, 5, 72, 40, true, false, 2),
    (40, 5, 120, 40, true, false, 1),
    (40, 5, 120, 40, true, false, 1),
    (40, 3, 240, 80, false, true, 2),
    (80, 3, 200, 80, false, true, 1),
    (80, 3, 184, 80, false, true, 1),
    (80, 3, 184, 80, false, true, 1),
    (80, 3, 480, 112, true, true, 1),
    (112, 3, 672, 112, true, true, 1),
    (112, 5, 672, 160, true, true, 2),
    (160, 5, 960, 160, true, true, 1),
    (160, 5, 960, 160, true, true, 1),
];

fn mobilenet_v3(large: bool, num_classes: usize) -> LayerGraph {
    let rows: &[V3Row] = if large { &V3_LARGE } else { &V3_SMALL };
    let head = if large { 1280 } else { 1024 };
    let hs = Activation::HardSwish;
    let (b, x) = GraphBuilder::new(3);
    let mut b = b.with_batch_norm(1e-3, 0.01);
    let mut h = b.conv_bn_act("features.0", x, rows[0].0, 3, 2, 1, Some(hs));
    for (i, &(_, k, exp, out, se, hswish, s)) in rows.iter().enumerate() {
        let cfg = SeBlockConfig {
            kernel: k,
            expanded: exp,
            out,
            stride: s,
            act: if hswish { hs } else { Activation::Relu },
            se_squeeze: se.then(|| make_divisible((exp / 4) as f64, 8)),
            se_act: Activation::Relu,
            se_gate: Activation::HardSigmoid,
        };
        h = inverted_residual_se(&mut b, &format!("features.{}", i + 1), h, &cfg);
    }
    let last_out = rows[rows.len() - 1].3;
    h = b.conv_bn_act(&format!("features.{}", rows.len() + 1), h, 6 * last_out, 1, 1, 1, Some(hs));
    let p = b.global_avg_pool(h);
    let f = b.flatten(p);
    let l = b.linear("classifier.0", f, head, true);
    let a = b.act(l, hs);
    let d = b.dropout(a, 0.2);
    b.linear("classifier.3", d, num_classes, true);
    b.finish(DEFAULT_INPUT_SIDE)
}

fn shufflenet_v2(widths: [usize; 5], num_classes: usize) -> LayerGraph {
    let (mut b, x) = GraphBuilder::new(3);
    let c = b.conv("conv1.0", x, widths[0], 3, 2, 1, 1, false);
    let c = b.batch_norm("conv1.1", c);
    let c = b.act(c, Activation::Relu);
    let mut h = b.max_pool(c, 3, 2, 1, false);
    for (stage, (&repeats, &out)) in [4usize, 8, 4].iter().zip(&widths[1..4]).enumerate() {
        for r in 0..repeats {
            let prefix = format!("stage{}.{r}", stage + 2);
            h = shufflenet_unit(&mut b, &prefix, h, out, if r == 0 { 2 } else { 1 });
        }
    }
    let c = b.conv("conv5.0", h, widths[4], 1, 1, 0, 1, false);
    let c = b.batch_norm("conv5.1", c);
    let c = b.act(c, Activation::Relu);
    let p = b.global_avg_pool(c);
    let f = b.flatten(p);
    b.linear("fc", f, num_classes, true);
    b.finish(DEFAULT_INPUT_SIDE)
}

fn squeezenet(v1_1: bool, num_classes: usize) -> LayerGraph {
    let (mut b, x) = GraphBuilder::new(3);
    let relu = Activation::Relu;
    let (mut h, fires): (_, &[(usize, usize, usize, usize)]) = if v1_1 {
        let c = b.conv("features.0", x, 64, 3, 2, 0, 1, true);
        let c = b.act(c, relu);
        (
            c,
            &[
                (2, 0, 0, 0),
                (3, 16, 64, 64),
                (4, 16, 64, 64),
                (5, 0, 0, 0),
                (6, 32, 128, 128),
                (7, 32, 128, 128),
                (8, 0, 0, 0),
                (9, 48, 192, 192),
                (10, 48, 192, 192),
                (11, 64, 256, 256),
                (12, 64, 256, 256),
            ],
        )
    } else {
        let c = b.conv("features.0", x, 96, 7, 2, 0, 1, true);
        let c = b.act(c, relu);
        (
            c,
            &[
                (2, 0, 0, 0),
                (3, 16, 64, 64),
                (4, 16, 64, 64),
                (5, 32, 128, 128),
                (6, 0, 0, 0),
                (7, 32, 128, 128),
                (8, 48, 192, 192),
                (9, 48, 192, 192),
                (10, 64, 256, 256),
                (11, 0, 0, 0),
                (12, 64, 256, 256),
            ],
        )
    };
    // squeeze width 0 marks a max pool
    for &(i, s, e1, e3) in fires {
        h = if s == 0 {
            b.max_pool(h, 3, 2, 0, true)
        } else {
            fire(&mut b, &format!("features.{i}"), h, s, e1, e3)
        };
    }
    let d = b.dropout(h, 0.5);
    let c = b.conv("classifier.1", d, num_classes, 1, 1, 0, 1, true);
    let c = b.act(c, relu);
    let p = b.global_avg_pool(c);
    b.flatten(p);
    b.finish(DEFAULT_INPUT_SIDE)
}

// (expand ratio, kernel, stride, in, out, layers)
const EFFICIENTNET_STAGES: [(usize, usize, usize, usize, usize, usize); 7] = [
    (1, 3, 1, 32, 16, 1),
    (6, 3, 2, 16, 24, 2),
    (6, 5, 2, 24, 40, 2),
    (6, 3, 2, 40, 80, 3),
    (6, 5, 1, 80, 112, 3),
    (6, 5, 2, 112, 192, 4),
    (6, 3, 1, 192, 320, 1),
];

fn efficientnet(width: f64, depth: f64, dropout: Float, num_classes: usize) -> LayerGraph {
    let silu = Activation::Silu;
    let adjust = |c: usize| make_divisible(c as f64 * width, 8);
    let (mut b, x) = GraphBuilder::new(3);
    let mut h = b.conv_bn_act("features.0", x, adjust(EFFICIENTNET_STAGES[0].3), 3, 2, 1, Some(silu));
    for (si, &(t, k, s, _, out, n)) in EFFICIENTNET_STAGES.iter().enumerate() {
        let out = adjust(out);
        let layers = (n as f64 * depth).ceil() as usize;
        for r in 0..layers {
            let inp = b.channels(h);
            let cfg = SeBlockConfig {
                kernel: k,
                expanded: make_divisible(inp as f64 * t as f64, 8),
                out,
                stride: if r == 0 { s } else { 1 },
                act: silu,
                se_squeeze: Some((inp / 4).max(1)),
                se_act: silu,
                se_gate: Activation::Sigmoid,
            };
            h = inverted_residual_se(&mut b, &format!("features.{}.{r}", si + 1), h, &cfg);
        }
    }
    let last = 4 * b.channels(h);
    h = b.conv_bn_act("features.8", h, last, 1, 1, 1, Some(silu));
    let p = b.global_avg_pool(h);
    let f = b.flatten(p);
    let d = b.dropout(f, dropout);
    b.linear("classifier.1", d, num_classes, true);
    b.finish(DEFAULT_INPUT_SIDE)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisible_rounding() {
        assert_eq!(make_divisible(32.0, 8), 32);
        assert_eq!(make_divisible(35.2, 8), 32);
        assert_eq!(make_divisible(17.6, 8), 16);
        assert_eq!(make_divisible(10.0, 8), 16);
        assert_eq!(make_divisible(4.0, 8), 8);
    }

    #[test]
    fn names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert_eq!("efficientnet_b2".parse::<Architecture>().unwrap(), Architecture::EfficientNetB2);
        let err = "resnet50".parse::<Architecture>().unwrap_err().to_string();
        assert!(err.contains("squeezenet1_1"));
    }

    #[test]
    fn spec_rejects_single_class() {
        assert!(ArchitectureSpec::new(Architecture::MobileNetV2, 1).is_err());
    }

    #[test]
    fn mobilenet_v2_head_size() {
        let g = build_architecture(&ArchitectureSpec::new(Architecture::MobileNetV2, 32).unwrap()).unwrap();
        let (name, head) = g.parameters().find(|(n, _)| n.starts_with("classifier")).unwrap();
        assert_eq!(name, "classifier.1.weight");
        assert_eq!(head.shape(), &[32, 1280]);
    }
}
