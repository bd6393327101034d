use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment accumulators, one pair per parameter tensor.
///
/// Bias correction is folded into the step size,
/// `lr_t = lr * sqrt(1 - beta2^t) / (1 - beta1^t)`, and epsilon is added to
/// the uncorrected `sqrt(v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// Accumulator shapes are fixed by the first call to [`Self::adam_step`].
    pub fn new(config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    pub fn adam_step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} parameter tensors but {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() && !params.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.first[i].len() {
                return Err(Error::Dimension(format!(
                    "tensor {i}: parameter {} / gradient {} / state {}",
                    p.len(),
                    g.len(),
                    self.first[i].len()
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as f64;
        let lr_t = lr * libm::sqrt(1.0 - libm::pow(beta2, t)) / (1.0 - libm::pow(beta1, t));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                p[j] -= lr_t * m[j] / (libm::sqrt(v[j]) + eps);
            }
        }
        Ok(())
    }

    /// Applies one step to every tensor of `params` using the matching tensor of `grads`.
    pub fn update<P: Parameterized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads: Vec<&[f64]> = grads.named_params().into_iter().map(|(_, m)| m.data()).collect();
        let mut params: Vec<&mut [f64]> = params.params_mut().into_iter().map(|m| m.data_mut()).collect();
        self.adam_step(&mut params, &grads)
    }
}
