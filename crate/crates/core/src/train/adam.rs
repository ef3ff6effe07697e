use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 4e-6, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction and coupled L2 decay (`g + wd * p` feeds the
/// moments).
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`; clears the gradients afterwards.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        if let Some(&id) = ids.iter().find(|&&id| store.get(id).grad().is_none()) {
            return Err(Error::Contract(format!("parameter {} has no gradient", store.name(id))));
        }
        self.step += 1;
        let AdamConfig { weight_decay, beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for id in ids {
            let t = store.get_mut(id);
            let grad = t.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (((p, g), m), v) in t.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g + weight_decay * *p;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
            t.clear_grad();
        }
        Ok(())
    }
}

/// Linear warm-up over the first `warmup` epochs, constant afterwards.
pub fn lr_at(epoch: usize, base_lr: f64, warmup: usize) -> f64 {
    if epoch < warmup {
        base_lr * (epoch + 1) as f64 / warmup as f64
    } else {
        base_lr
    }
}
