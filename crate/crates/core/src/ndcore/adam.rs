use serde::{Deserialize, Serialize};

use super::tensor::{GradSet, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators mirroring a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Tensors with `trainable == false` are
/// skipped entirely, moments included.
pub fn adam_step(params: &mut ParamSet, grads: &GradSet, state: &mut AdamState) -> Result<()> {
    grads.check_matches(params)?;
    if state.m.len() != params.len() {
        return Err(Error::shape("optimizer state does not mirror parameters"));
    }
    for (p, g) in params.tensors.iter().zip(&grads.values) {
        if p.trainable {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient for {} at index {i}",
                    p.name
                )));
            }
        }
    }

    state.t += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (ti, (p, g)) in params.tensors.iter_mut().zip(&grads.values).enumerate() {
        if !p.trainable {
            continue;
        }
        let m = &mut state.m[ti];
        let v = &mut state.v[ti];
        for (((w, &gi), mi), vi) in p.values.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
