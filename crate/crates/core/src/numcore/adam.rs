//! Adaptive-moment optimizer with bias correction.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |_| store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        Self { config, step, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    /// Applies one update to every trainable parameter from its stored grad.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for ((m, v), (_, p)) in self.m.iter().zip(&self.v).zip(store.iter()) {
            if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                return Err(Error::Shape(format!(
                    "moment shape {:?} vs parameter `{}` shape {:?}",
                    m.shape(),
                    p.name,
                    p.value.shape()
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
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((m, v), p) in self.m.iter_mut().zip(self.v.iter_mut()).zip(store.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, x) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * g[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
