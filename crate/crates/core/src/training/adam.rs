use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConstants {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub constants: AdamConstants,
}

impl AdamState {
    pub fn new(len: usize, constants: AdamConstants) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            constants,
        }
    }
}

/// One bias-corrected Adam update of `theta` in place.
///
/// On a non-finite update `theta` and `state` are left untouched.
pub fn adam_step(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if theta.len() != grad.len() || state.m.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            context: "adam_step",
            expected: theta.len(),
            got: grad.len(),
        });
    }
    let AdamConstants { beta1, beta2, eps } = state.constants;
    let t = state.t + 1;
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut next = theta.to_vec();
    for i in 0..theta.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        next[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adam update".into()));
    }
    theta.copy_from_slice(&next);
    state.m = m;
    state.v = v;
    state.t = t;
    Ok(())
}

/// Piecewise-constant decay `initial * factor^floor(step / every)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            factor: 0.7,
            every: 5000,
        }
    }
}

impl StepDecay {
    pub fn lr(&self, step: usize) -> f64 {
        self.initial * self.factor.powi((step / self.every.max(1)) as i32)
    }
}
