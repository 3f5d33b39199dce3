//! Running normalization of value targets.

use serde::{Deserialize, Serialize};

/// Exponentially weighted mean and second moment with bias correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueNorm {
    pub beta: f64,
    pub mean: f64,
    pub mean_sq: f64,
    pub debias: f64,
}

const MIN_VAR: f64 = 1e-2;

impl Default for ValueNorm {
    fn default() -> Self {
        Self {
            beta: 0.99999,
            mean: 0.0,
            mean_sq: 0.0,
            debias: 0.0,
        }
    }
}

impl ValueNorm {
    pub fn update(&mut self, values: &[f64]) {
        if values.is_empty() {
            return;
        }
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        let sq = values.iter().map(|v| v * v).sum::<f64>() / n;
        let w = self.beta;
        self.mean = w * self.mean + (1.0 - w) * m;
        self.mean_sq = w * self.mean_sq + (1.0 - w) * sq;
        self.debias = w * self.debias + (1.0 - w);
    }

    fn stats(&self) -> (f64, f64) {
        if self.debias <= 0.0 {
            return (0.0, 1.0);
        }
        let mean = self.mean / self.debias;
        let var = (self.mean_sq / self.debias - mean * mean).max(MIN_VAR);
        (mean, var.sqrt())
    }

    pub fn normalize(&self, v: f64) -> f64 {
        let (m, s) = self.stats();
        (v - m) / s
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        let (m, s) = self.stats();
        v * s + m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_update_is_debiased() {
        let mut n = ValueNorm::default();
        n.update(&[2.0, 4.0, 6.0]);
        assert!((n.normalize(4.0)).abs() < 1e-6);
        let std = (8.0f64 / 3.0).sqrt();
        assert!((n.normalize(4.0 + std) - 1.0).abs() < 1e-6);
        assert!((n.denormalize(n.normalize(3.3)) - 3.3).abs() < 1e-12);
    }

    #[test]
    fn fresh_normalizer_is_identity() {
        let n = ValueNorm::default();
        assert_eq!(n.normalize(1.25), 1.25);
    }
}
