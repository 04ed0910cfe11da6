//! Central finite-difference checks of every backward pass.

mod common;

use artzoom::nn::Mode;
use common::*;

const SHAPES_PER_KIND: usize = 20;

fn check_kind(kind: &'static str, seed: u64) {
    let err = layer_kind_error(kind, SHAPES_PER_KIND, seed);
    assert!(err < GRAD_TOL, "{kind}: max relative error {err:e}");
}

macro_rules! kind_tests {
    ($($name:ident => $kind:literal),* $(,)?) => {
        $(
            #[test]
            fn $name() {
                check_kind($kind, 0x9e37 ^ stringify!($name).len() as u64);
            }
        )*
    };
}

kind_tests! {
    conv2d => "conv2d",
    depthwise_conv2d => "depthwise_conv2d",
    batch_norm_train => "batch_norm_train",
    batch_norm_eval => "batch_norm_eval",
    relu => "relu",
    relu6 => "relu6",
    hard_swish => "hard_swish",
    hard_sigmoid => "hard_sigmoid",
    silu => "silu",
    sigmoid => "sigmoid",
    max_pool => "max_pool",
    global_avg_pool => "global_avg_pool",
    pool_flatten_linear => "pool_flatten_linear",
    dropout => "dropout",
    add => "add",
    concat => "concat",
    channel_scale => "channel_scale",
    channel_shuffle => "channel_shuffle",
    channel_slice => "channel_slice",
    cross_entropy => "cross_entropy",
}

#[test]
fn every_layer_kind_is_covered() {
    assert_eq!(LAYER_KINDS.len(), 20);
    for kind in LAYER_KINDS {
        if kind != "cross_entropy" {
            assert_eq!(grad_cases(kind, 1, 1).len(), 1);
        }
    }
}

#[test]
fn composite_blocks() {
    for (i, c) in block_cases(5).iter().enumerate() {
        let err = max_grad_error(&c.graph, &c.input, c.mode, 40 + i as u64);
        assert!(err < GRAD_TOL, "{}: {err:e}", c.kind);
    }
}

#[test]
fn whole_small_network_in_train_mode() {
    let mut r = rng(8);
    let mut g = desk_mobilenet(4);
    randomise(&mut g, &mut r);
    let x = random_tensor(&mut r, &[2, 3, 16, 16], 1.0);
    let err = max_grad_error(&g, &x, Mode::Train { seed: 3 }, 11);
    assert!(err < GRAD_TOL, "{err:e}");
}
