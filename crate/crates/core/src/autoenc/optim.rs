//! Adam and the cosine-annealing warm-restart learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::layers::Param;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineWarmRestarts {
    pub lr0: f64,
    pub first_period: f64,
    pub period_mult: f64,
}

impl Default for CosineWarmRestarts {
    fn default() -> Self {
        Self { lr0: 1e-3, first_period: 20.0, period_mult: 2.0 }
    }
}

impl CosineWarmRestarts {
    /// Learning rate at a (fractional) epoch. Each period is the half-open
    /// interval `(start, start + T_i]`: the boundary itself is the end of the
    /// previous period (lr 0) and the rate jumps back to `lr0` just after it.
    /// `t = 0` gives `lr0`.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        if epoch <= 0.0 {
            return self.lr0;
        }
        let (mut start, mut period) = (0.0, self.first_period);
        while epoch > start + period {
            start += period;
            period *= self.period_mult;
        }
        let frac = ((epoch - start) / period).clamp(0.0, 1.0);
        (0.5 * self.lr0 * (1.0 + (std::f64::consts::PI * frac).cos())).max(0.0)
    }

    /// Rate at the start of whole epoch `epoch`, taking the restarted value
    /// at period boundaries (`lr0` at 0, 20, 60, ...).
    pub fn epoch_start_lr(&self, epoch: usize) -> f64 {
        let (mut start, mut period) = (0.0, self.first_period);
        while epoch as f64 >= start + period {
            start += period;
            period *= self.period_mult;
        }
        let frac = (epoch as f64 - start) / period;
        0.5 * self.lr0 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut Param<S>], lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![S::zero(); p.value.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer state does not match parameter list");
        self.t += 1;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = S::lit(lr / bc1);
        let bc2_sqrt = S::lit(bc2.sqrt());
        let eps = S::lit(self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (S::one() - b1) * g;
                v[i] = b2 * v[i] + (S::one() - b2) * g * g;
                p.value[i] -= step * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
    }

    pub fn moments(&self) -> (&[Vec<S>], &[Vec<S>]) {
        (&self.m, &self.v)
    }
}
