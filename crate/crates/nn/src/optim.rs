use std::f64::consts::PI;

use crate::param::Param;

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            step: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for p in params {
            let wd = if p.decay { self.weight_decay } else { 0.0 };
            for i in 0..p.value.len() {
                let g = p.grad[i] + wd * p.value[i];
                p.m[i] = self.beta1 * p.m[i] + (1.0 - self.beta1) * g;
                p.v[i] = self.beta2 * p.v[i] + (1.0 - self.beta2) * g * g;
                let mhat = p.m[i] / bc1;
                let vhat = p.v[i] / bc2;
                p.value[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Cosine annealing with optional warm restarts at given epoch boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_epochs: usize,
    /// Epochs at which the learning rate jumps back to `base_lr`.
    pub restarts: Vec<usize>,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, total_epochs: usize) -> Self {
        Self {
            base_lr,
            min_lr: 0.0,
            total_epochs,
            restarts: Vec::new(),
        }
    }

    pub fn with_restarts(mut self, restarts: Vec<usize>) -> Self {
        self.restarts = restarts;
        self
    }

    /// Learning rate at fractional epoch `t` (0 ≤ t < total_epochs).
    pub fn lr(&self, t: f64) -> f64 {
        let mut start = 0usize;
        let mut end = self.total_epochs.max(1);
        for &r in &self.restarts {
            if r as f64 <= t {
                start = r;
            } else {
                end = end.min(r);
                break;
            }
        }
        let span = (end.saturating_sub(start)).max(1) as f64;
        let progress = ((t - start as f64) / span).clamp(0.0, 1.0);
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (PI * progress).cos())
    }
}
