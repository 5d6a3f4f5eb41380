use serde::{Deserialize, Serialize};

use crate::params::{GradStore, ParamId, ParamKind, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// L2 penalty added to the gradient.
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Adam {
        let zeros = |id: ParamId| vec![0f32; params.get(id).len()];
        Adam {
            config,
            step: 0,
            m: params.ids().map(zeros).collect(),
            v: params.ids().map(zeros).collect(),
        }
    }

    /// One update of every weight that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            if params.kind(id) != ParamKind::Weight {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let w = &mut params.get_mut(id).data;
            for i in 0..w.len() {
                let gi = g[i] + c.weight_decay * w[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                w[i] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
    }

    /// Moment buffers for checkpointing.
    pub fn state(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }
}
