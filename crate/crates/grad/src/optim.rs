//! AdamW with decoupled weight decay and a cosine learning-rate schedule.

use crate::{Grads, ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Per-parameter moment estimates. Only trainable parameters are ever touched.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    /// `(first moment, second moment)` indexed by parameter id; `None` until first update.
    pub moments: Vec<Option<(Tensor, Tensor)>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        AdamW { config, step: 0, moments: vec![None; store.len()] }
    }

    /// Applies one update with learning rate `lr`, using every gradient in `grads`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        let updates: Vec<(ParamId, Tensor)> = grads.params().map(|(id, g)| (id, g.clone())).collect();
        self.step_with(store, &updates, lr);
    }

    pub fn step_with(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (id, grad) in grads {
            if !store.get(*id).trainable {
                continue;
            }
            let value = store.value_mut(*id);
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (Tensor::zeros(value.shape()), Tensor::zeros(value.shape())));
            let (md, vd, pd, gd) = (m.data_mut(), v.data_mut(), value.data_mut(), grad.data());
            for i in 0..pd.len() {
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gd[i];
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gd[i] * gd[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * pd[i]);
            }
        }
    }
}

/// Cosine decay from `lr_init` at step 0 to `lr_min` at `total_steps`.
#[derive(Clone, Copy, Debug)]
pub struct CosineSchedule {
    pub lr_init: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.lr_init;
        }
        let t = (step.min(self.total_steps)) as f64 / self.total_steps as f64;
        self.lr_min + 0.5 * (self.lr_init - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
