use std::collections::BTreeMap;

use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Outcome of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepStatus {
    Applied,
    /// No gradients were accumulated since the last reset; nothing changed.
    NoGradients,
}

/// Bias-corrected Adam. Moment buffers are keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            ..Default::default()
        }
    }

    /// Number of applied steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore) -> StepStatus {
        if !store.grads_populated() {
            return StepStatus::NoGradients;
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in store.iter_mut() {
            let n = p.value.len();
            let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; n]);
            let grad = p.grad.data();
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                let gk = grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        StepStatus::Applied
    }
}
