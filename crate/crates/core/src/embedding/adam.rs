use serde::{Deserialize, Serialize};

use super::model::EmbeddingModel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.lr must be positive, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!(
                    "optimizer.{name} must be in [0, 1), got {b}"
                )));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "optimizer.eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// First and second moment accumulators with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }
}

pub fn adam_step(
    state: &mut OptimizerState,
    model: &mut EmbeddingModel,
    grads: &[f64],
) -> Result<()> {
    let n = model.params().len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: grads.len().min(state.m.len()).min(state.v.len()),
        });
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (((w, &g), m), v) in model
        .params_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
