use serde::{Deserialize, Serialize};

use super::NetworkParams;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamState {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step_count: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps_hat: cfg.eps_hat,
        }
    }

    pub fn config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps_hat: self.eps_hat,
        }
    }
}

/// One bias-corrected Adam update, in place. A non-finite gradient is
/// rejected before anything is modified.
pub fn adam_step(p: &mut NetworkParams, st: &mut AdamState, grad: &[f64]) -> Result<()> {
    adam_step_slice(&mut p.values, st, grad)
}

/// Moments of parameters that stop receiving gradient decay geometrically into
/// the subnormal range, where arithmetic is two orders of magnitude slower.
/// Anything that small contributes nothing to the update, so it is zeroed.
#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < 1e-200 {
        0.0
    } else {
        x
    }
}

pub fn adam_step_slice(values: &mut [f64], st: &mut AdamState, grad: &[f64]) -> Result<()> {
    if grad.len() != values.len() || st.m.len() != values.len() {
        return Err(Error::LengthMismatch {
            context: "adam_step",
            expected: values.len(),
            got: grad.len(),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    st.step_count += 1;
    let t = st.step_count as i32;
    // m̂ = m / c1 and v̂ = v / c2 folded into two scalars
    let step = st.lr / (1.0 - st.beta1.powi(t));
    let inv_c2 = 1.0 / (1.0 - st.beta2.powi(t));
    let (b1, b2, eps) = (st.beta1, st.beta2, st.eps_hat);
    for (((w, m), v), &g) in values.iter_mut().zip(&mut st.m).zip(&mut st.v).zip(grad) {
        *m = flush(b1 * *m + (1.0 - b1) * g);
        *v = flush(b2 * *v + (1.0 - b2) * g * g);
        *w -= step * *m / ((*v * inv_c2).sqrt() + eps);
    }
    Ok(())
}
