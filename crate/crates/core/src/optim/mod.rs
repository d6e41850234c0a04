//! Adam optimizer with checkpointable state and the warmup/decay schedule.

mod checkpoint;
#[cfg(test)]
mod tests;

pub use checkpoint::{checkpoint_file_name, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::diff::{DiffArray, GradMap};
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Adam hyperparameters. The values are the model family's conventional
/// defaults; they are echoed into every config snapshot as assumed settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Moments {
    pub name: String,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Optimizer state: one pair of moment vectors per parameter, in the
/// parameter set's canonical visit order, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub(crate) moments: Vec<Moments>,
}

impl AdamState {
    pub fn new(params: &ModelParams, hyper: AdamHyper) -> Self {
        let mut moments = Vec::new();
        params.visit(&mut |name, arr| {
            moments.push(Moments {
                name: name.to_string(),
                first: vec![0.0; arr.len()],
                second: vec![0.0; arr.len()],
            });
        });
        AdamState { hyper, step: 0, moments }
    }

    pub fn num_parameters(&self) -> usize {
        self.moments.len()
    }

    /// Moment vectors of a parameter by name (first, second).
    pub fn moments_of(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments
            .iter()
            .find(|m| m.name == name)
            .map(|m| (m.first.as_slice(), m.second.as_slice()))
    }
}

/// One bias-corrected Adam update. `tracked` must be the tracked view that
/// produced `grads`; parameters missing from the gradient map are treated as
/// having zero gradient (their moments still decay). Returns the updated
/// parameter set; the inputs are left untouched.
pub fn adam_step(
    params: &ModelParams,
    tracked: &ModelParams,
    grads: &GradMap,
    state: &mut AdamState,
    lr: f64,
) -> Result<ModelParams> {
    if lr < 0.0 {
        return Err(Error::InvalidArgument(format!("negative learning rate {lr}")));
    }

    // gradient arrays in canonical order, zeros where no gradient flowed
    let mut grad_list: Vec<(String, DiffArray)> = Vec::with_capacity(state.moments.len());
    tracked.visit(&mut |name, arr| {
        grad_list.push((name.to_string(), grads.grad_of(arr)));
    });
    for (name, g) in &grad_list {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    if grad_list.len() != state.moments.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer state tracks {} parameters, model has {}",
            state.moments.len(),
            grad_list.len()
        )));
    }

    state.step += 1;
    let t = state.step;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);

    let mut index = 0;
    let updated = params.map(&mut |name, arr| {
        let slot = &mut state.moments[index];
        debug_assert_eq!(slot.name, name, "visit order drifted");
        let g = grad_list[index].1.values();
        let mut out = arr.values().to_vec();
        for i in 0..out.len() {
            slot.first[i] = h.beta1 * slot.first[i] + (1.0 - h.beta1) * g[i];
            slot.second[i] = h.beta2 * slot.second[i] + (1.0 - h.beta2) * g[i] * g[i];
            let m_hat = slot.first[i] / bc1;
            let v_hat = slot.second[i] / bc2;
            let mut step_val = lr * m_hat / (v_hat.sqrt() + h.epsilon);
            if h.weight_decay > 0.0 {
                step_val += lr * h.weight_decay * out[i];
            }
            out[i] -= step_val;
        }
        index += 1;
        DiffArray::from_vec(arr.shape().to_vec(), out).expect("shape preserved")
    });
    Ok(updated)
}

/// Linear warmup to the peak learning rate, then linear decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub peak_lr: f64,
}

impl Schedule {
    /// Full-scale reference schedule: warmup to 1e-4 over the first 10,000
    /// steps of a 1,000,000-step run.
    pub fn full_scale() -> Self {
        Schedule { warmup_steps: 10_000, total_steps: 1_000_000, peak_lr: 1e-4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 || self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "need 0 < warmup ({}) < total steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.peak_lr <= 0.0 {
            return Err(Error::Config("peak learning rate must be > 0".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::InvalidArgument(format!(
                "step {} beyond schedule end {}",
                step, self.total_steps
            )));
        }
        if step <= self.warmup_steps {
            Ok(self.peak_lr * step as f64 / self.warmup_steps as f64)
        } else {
            Ok(self.peak_lr * (self.total_steps - step) as f64
                / (self.total_steps - self.warmup_steps) as f64)
        }
    }
}
