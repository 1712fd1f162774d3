use std::f64::consts::PI;

use super::model::Tensors;
use crate::scalar::Scalar;

/// Linear warmup to the peak rate, then cosine decay towards zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(peak_lr: f64, warmup_frac: f64, total_steps: usize) -> Self {
        let warmup_steps = (warmup_frac * total_steps as f64).ceil() as usize;
        Self { peak_lr, warmup_steps: warmup_steps.min(total_steps), total_steps }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = (step - self.warmup_steps) as f64 / span as f64;
        self.peak_lr * 0.5 * (1.0 + (PI * progress.min(1.0)).cos())
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Tensors<T>,
    v: Tensors<T>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(shapes: &Tensors<T>, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Tensors<T> = shapes.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self { beta1, beta2, eps, weight_decay, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, params: &mut Tensors<T>, grads: &Tensors<T>, lr: f64) {
        self.t += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let bias1 = T::lit(1.0 - self.beta1.powi(self.t));
        let bias2 = T::lit(1.0 - self.beta2.powi(self.t));
        let eps = T::lit(self.eps);
        let lr_t = T::lit(lr);
        let decay = T::lit(1.0 - lr * self.weight_decay);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] = p[i] * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
