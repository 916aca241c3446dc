use serde::{Deserialize, Serialize};

use super::tensor::{GradBuffer, ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Hyperparameters of the adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.0005,
            weight_decay: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        OptimizerState {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// One bias-corrected update; weight decay is applied to the parameter
    /// directly, not folded into the gradient.
    ///
    /// Non-finite gradients abort the step and leave everything untouched.
    pub fn update(&mut self, params: &mut ParamSet, grads: &GradBuffer) -> Result<()> {
        self.update_except(params, grads, &[])
    }

    /// As [`update`](Self::update), leaving the `frozen` parameters and
    /// their moments untouched.
    pub fn update_except(&mut self, params: &mut ParamSet, grads: &GradBuffer, frozen: &[ParamId]) -> Result<()> {
        if self.first_moment.len() != params.len() || grads.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, params {}, grads {}",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        if params.ids().any(|id| !frozen.contains(&id) && !grads.get(id).is_finite()) {
            let bad: Vec<&str> = params
                .ids()
                .filter(|&id| !frozen.contains(&id) && !grads.get(id).is_finite())
                .map(|id| params.name(id))
                .collect();
            return Err(Error::Numeric(format!("non-finite gradient in {bad:?}; step aborted")));
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            weight_decay: wd,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        for id in params.ids().filter(|id| !frozen.contains(id)).collect::<Vec<_>>() {
            let g = grads.get(id).data();
            let m = self.first_moment[id.index()].data_mut();
            let v = self.second_moment[id.index()].data_mut();
            let w = params.get_mut(id).data_mut();
            for i in 0..w.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * (m_hat / (v_hat.sqrt() + epsilon) + wd * w[i]);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut GradBuffer, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
