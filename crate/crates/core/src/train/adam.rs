use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::net::ModelParams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "ADAM betas must lie in [0, 1), got {} and {}",
            self.beta1,
            self.beta2
        );
        ensure!(self.eps > 0.0, "ADAM epsilon must be positive");
        Ok(())
    }
}

/// First and second moments, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    /// Number of steps taken so far.
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl AdamState {
    pub fn new(params: &ModelParams<f32>, config: AdamConfig) -> Self {
        let zeros = || params.slots().iter().map(|s| Tensor::zeros(s.value.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected ADAM step using the gradients stored in `params`.
/// Nothing is modified when any gradient is non-finite.
pub fn adam_step(params: &mut ModelParams<f32>, state: &mut AdamState, lr: f64) -> Result<()> {
    state.config.validate()?;
    ensure!(lr >= 0.0 && lr.is_finite(), "learning rate must be finite and non-negative, got {lr}");
    ensure!(
        state.m.len() == params.slots().len(),
        "optimizer state has {} tensors for {} parameters",
        state.m.len(),
        params.slots().len()
    );
    for (name, slot) in params.names().iter().zip(params.slots()) {
        if !slot.grad.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter tensor {name}")));
        }
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, slot) in params.slots_mut().iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let grad = slot.grad.data();
        for (j, w) in slot.value.data_mut().iter_mut().enumerate() {
            let g = grad[j] as f64;
            let mj = beta1 * m[j] as f64 + (1.0 - beta1) * g;
            let vj = beta2 * v[j] as f64 + (1.0 - beta2) * g * g;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
            *w = (*w as f64 - update) as f32;
        }
    }
    Ok(())
}
