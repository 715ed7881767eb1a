//! Adam with epoch-indexed learning-rate schedules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `lr0 · (1/2)^floor(epoch / period)`
    Halving { lr0: f64, period: usize },
    /// `lr0 · rate^epoch`
    Exponential { lr0: f64, rate: f64 },
}

impl LrSchedule {
    pub fn halving(lr0: f64, period: usize) -> Self {
        LrSchedule::Halving { lr0, period }
    }

    pub fn exponential(lr0: f64) -> Self {
        LrSchedule::Exponential { lr0, rate: 0.95 }
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Halving { lr0, period } => {
                lr0 * 0.5f64.powi((epoch / period.max(1)) as i32)
            }
            LrSchedule::Exponential { lr0, rate } => lr0 * rate.powi(epoch as i32),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {name}")]
    NonFiniteGradient { name: String },
    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr_schedule: LrSchedule,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr_schedule: LrSchedule) -> Self {
        let zeros = |p: &ParamStore| p.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState {
            step: 0,
            m: zeros(params),
            v: zeros(params),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr_schedule,
        }
    }
}

/// One Adam update using the gradients accumulated in `params`.
///
/// Parameters without a gradient buffer are treated as having zero gradient.
/// A non-finite gradient aborts the update before any parameter is touched.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, epoch: usize) -> Result<(), OptimError> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(OptimError::StateMismatch(format!(
            "{} accumulators for {} parameters",
            state.m.len(),
            params.len()
        )));
    }
    for (i, (name, t)) in params.iter().enumerate() {
        if state.m[i].len() != t.len() {
            return Err(OptimError::StateMismatch(format!("length of {name}")));
        }
        if let Some(g) = t.grad() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(OptimError::NonFiniteGradient { name: name.to_string() });
            }
        }
    }
    state.step += 1;
    let lr = state.lr_schedule.rate_at(epoch);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bias1 = 1.0 - b1.powi(state.step as i32);
    let bias2 = 1.0 - b2.powi(state.step as i32);
    for (i, t) in params.tensors_mut().iter_mut().enumerate() {
        let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, p) in t.values_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
