//! Adaptive-moment optimizer with decoupled weight decay, and a linear decay schedule.

use crate::tensor::snap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment state for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    decay: bool,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    /// `decay` selects whether weight decay applies to this tensor (weights yes, biases no).
    pub fn new(len: usize, cfg: AdamWConfig, decay: bool) -> Self {
        AdamW {
            cfg,
            decay,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One update at learning rate `lr`. Updated parameters are rounded to `f32` precision.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = if self.decay { weight_decay } else { 0.0 };
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
            *p = snap(*p - lr * (update + decay * *p));
        }
    }
}

/// Learning rate decaying linearly from `base` to zero over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub base: f64,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.base;
        }
        self.base * (1.0 - step as f64 / self.total_steps as f64).max(0.0)
    }
}
