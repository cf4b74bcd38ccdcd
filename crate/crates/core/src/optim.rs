//! Adam with decoupled weight decay, and a step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(len: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One update over all parameters.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let (bc1, bc2) = self.bias_corrections();
        for i in 0..params.len() {
            self.update(i, params, grads[i], bc1, bc2);
        }
    }

    /// One update touching only `indices`; the other moments are left as
    /// they are (lazy Adam).
    pub fn step_sparse(&mut self, params: &mut [f64], grads: &[f64], indices: &[usize]) {
        self.t += 1;
        let (bc1, bc2) = self.bias_corrections();
        for &i in indices {
            self.update(i, params, grads[i], bc1, bc2);
        }
    }

    fn bias_corrections(&self) -> (f64, f64) {
        let t = self.t as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }

    fn update(&mut self, i: usize, params: &mut [f64], g: f64, bc1: f64, bc2: f64) {
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
        let m_hat = self.m[i] / bc1;
        let v_hat = self.v[i] / bc2;
        params[i] -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
    }
}

/// Multiplies the learning rate by `gamma` every `step_size` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub base_lr: f64,
    pub step_size: usize,
    pub gamma: f64,
}

impl StepDecay {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.step_size == 0 {
            return self.base_lr;
        }
        self.base_lr * self.gamma.powi((epoch / self.step_size) as i32)
    }
}
