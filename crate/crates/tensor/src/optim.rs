use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0) }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |s: &ParamStore| s.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self { config, m: zeros(store), v: zeros(store), step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// One Adam update. Gradients are validated before anything is mutated, so a
/// rejected step leaves parameters and moments untouched.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut OptimizerState,
) -> Result<StepReport> {
    let cfg = state.config.clone();
    if !(cfg.lr > 0.0) {
        return Err(TensorError::InvalidHyperparameter(format!("learning rate {}", cfg.lr)));
    }
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(TensorError::InvalidHyperparameter(
            "gradient/optimizer state does not match the parameter store".into(),
        ));
    }
    for (id, name, p) in store.iter() {
        let g = grads.get(id);
        if g.shape() != p.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                shapes: vec![p.shape().to_vec(), g.shape().to_vec()],
            });
        }
        if !g.is_finite() {
            return Err(TensorError::NonFiniteGradient(name.to_string()));
        }
    }

    let mut grads = grads.clone();
    let (grad_norm, clipped) = match cfg.clip_norm {
        Some(max) => {
            let n = clip_global_norm(&mut grads, max);
            (n, n > max)
        }
        None => (grads.global_norm(), false),
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..store.len() {
        let id = crate::params::ParamId(i);
        let g = grads.get(id).data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.get_mut(id).data_mut();
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(StepReport { grad_norm, clipped })
}
