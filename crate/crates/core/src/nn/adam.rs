//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Param]) -> Result<Self> {
        config.validate()?;
        let moments: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Ok(Self {
            config,
            step: 0,
            first: moments.clone(),
            second: moments,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently stored in `params`.
    ///
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.first) {
            if p.value.shape() != m.shape() || p.grad.shape() != m.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{}` has shape {:?}, optimizer state has {:?}",
                    p.name,
                    p.value.shape(),
                    m.shape()
                )));
            }
            if !p.grad.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: p.name.clone(),
                });
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let correct1 = 1.0 - beta1.powi(self.step as i32);
        let correct2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let Param { value, grad, .. } = &mut **p;
            for (((w, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let mhat = *mi / correct1;
                let vhat = *vi / correct2;
                *w -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
