//! AdamW with decoupled weight decay.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::autograd::Gradients;
use super::init::HasParams;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Per-parameter first/second moment state keyed by parameter name.
/// Parameters that receive no gradient in a step are left untouched
/// (no decay, no moment update), so unused heads stay bit-identical.
pub struct AdamW {
    pub cfg: AdamWConfig,
    state: HashMap<String, Moments>,
    step_count: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> AdamW {
        AdamW {
            cfg,
            state: HashMap::new(),
            step_count: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every parameter of `model` that has a gradient.
    pub fn step(&mut self, model: &mut dyn HasParams, grads: &Gradients) -> Result<()> {
        self.step_count += 1;
        let cfg = self.cfg.clone();
        let state = &mut self.state;
        let mut failure: Option<Error> = None;
        model.visit_mut(&mut |p| {
            if failure.is_some() {
                return;
            }
            let Some(g) = grads.get(&p.tensor) else {
                return;
            };
            if g.iter().any(|v| !v.is_finite()) {
                failure = Some(Error::Train(format!(
                    "non-finite gradient for parameter {}",
                    p.name
                )));
                return;
            }
            let n = p.tensor.numel();
            let entry = state.entry(p.name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                step: 0,
            });
            if entry.m.len() != n {
                failure = Some(Error::Train(format!(
                    "optimizer state size mismatch for parameter {}",
                    p.name
                )));
                return;
            }
            entry.step += 1;
            let t = entry.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let mut data = p.tensor.data().to_vec();
            for i in 0..n {
                entry.m[i] = cfg.beta1 * entry.m[i] + (1.0 - cfg.beta1) * g[i];
                entry.v[i] = cfg.beta2 * entry.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = entry.m[i] / bc1;
                let v_hat = entry.v[i] / bc2;
                data[i] -=
                    cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * data[i]);
            }
            if data.iter().any(|v| !v.is_finite()) {
                failure = Some(Error::Train(format!(
                    "non-finite values in parameter {} after update",
                    p.name
                )));
                return;
            }
            if let Err(e) = p.set_data(data) {
                failure = Some(e);
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}
