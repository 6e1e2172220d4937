//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::tensor::ParamSet;
use crate::{HinError, Result};

/// Per-parameter first and second moments plus the shared step counter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.tensor.len()]).collect();
        AdamState { m, v, t: 0 }
    }
}

/// One update over every trainable parameter from the gradients
/// accumulated in the set. Frozen parameters are untouched; a trainable
/// parameter with no accumulated gradient is an error. The step counter
/// increments exactly once per call.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if let Some(max_norm) = cfg.clip_norm {
        clip_gradients(params, max_norm);
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (pid, p) in params.iter_mut().enumerate() {
        if !p.tensor.requires_grad {
            continue;
        }
        let grad = p.tensor.grad.as_ref().ok_or_else(|| {
            HinError::invalid(
                "adam_step",
                format!("missing gradient for trainable parameter `{}`", p.name),
            )
        })?;
        let m = &mut state.m[pid];
        let v = &mut state.v[pid];
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.tensor.data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Scale all gradients down when their global L2 norm exceeds `max_norm`.
fn clip_gradients(params: &mut ParamSet, max_norm: f64) {
    let mut sq = 0.0;
    for p in params.iter() {
        if let Some(g) = &p.tensor.grad {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = &mut p.tensor.grad {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }
}
