//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use super::param::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let states = store
            .iter()
            .map(|(_, p)| AdamState {
                m: vec![0.0; p.value().len()],
                v: vec![0.0; p.value().len()],
            })
            .collect();
        Self {
            config,
            step: 0,
            states,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Number of completed updates.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Applies one update using the gradients currently held by `store`.
    ///
    /// Every parameter must have received a gradient since its last
    /// `zero_grad`; otherwise nothing is modified and a harness error is returned.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.states.len() {
            return Err(Error::harness(format!(
                "optimizer tracks {} parameters, store has {}",
                self.states.len(),
                store.len()
            )));
        }
        if let Some((_, p)) = store.iter().find(|(_, p)| !p.has_grad()) {
            return Err(Error::harness(format!(
                "adam step with unpopulated gradient for {}",
                p.name()
            )));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (p, state) in store.iter_mut().zip(&mut self.states) {
            let grad = p.grad().data().to_vec();
            let value = p.value_mut().data_mut();
            for (((x, g), m), v) in value
                .iter_mut()
                .zip(&grad)
                .zip(&mut state.m)
                .zip(&mut state.v)
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
