//! Adaptive-moment gradient descent with a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Added to the root second moment. Zero makes updates invariant to a
    /// positive rescaling of the objective; a vanishing second moment then
    /// skips the coordinate.
    pub eps: f64,
    /// Final learning rate as a fraction of `lr`.
    pub final_fraction: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            final_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(config: AdamConfig, n: usize) -> Self {
        Adam {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Cosine decay from `lr` at step 0 to `final_fraction·lr` at `total_steps`.
    pub fn learning_rate(&self, step: usize, total_steps: usize) -> f64 {
        let c = &self.config;
        if total_steps <= 1 {
            return c.lr;
        }
        let progress = (step as f64 / (total_steps - 1) as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        c.lr * (c.final_fraction + (1.0 - c.final_fraction) * cosine)
    }

    /// One update of `params` in place with learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let denom = (self.v[i] / bc2).sqrt() + c.eps;
            if denom > 0.0 {
                params[i] -= lr * (self.m[i] / bc1) / denom;
            }
        }
    }
}
