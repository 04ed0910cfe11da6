use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn::{Float, Tensor};

pub const DEFAULT_TRAIN_SEED: u64 = 20_210_101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs_per_fold: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs_per_fold: 10,
            batch_size: 32,
            seed: DEFAULT_TRAIN_SEED,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) =
            params.into_iter().map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape()))).unzip();
        Self { step: 0, m, v }
    }
}

/// One AdamW update. Weight decay multiplies each parameter by
/// `1 - lr * wd` before, and independently of, the moment-based step.
pub fn adamw_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::Nn(crate::nn::NnError::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        ))));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(TrainError::Nn(crate::nn::NnError::ShapeMismatch(format!(
                "parameter {i}: {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            ))));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1 as Float, cfg.beta2 as Float);
    let lr = cfg.learning_rate as Float;
    let eps = cfg.epsilon as Float;
    let decay = 1.0 - lr * cfg.weight_decay as Float;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((pv, &gv), (mv, vv)) in it {
            *pv *= decay;
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let mhat = *mv / bc1;
            let vhat = *vv / bc2;
            *pv -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
