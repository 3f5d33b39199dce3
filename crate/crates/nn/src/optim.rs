//! Adam.

use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-5,
        }
    }
}

/// Adam over a fixed subset of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let zeros = |id: &ParamId| {
            let (r, c) = store.value(*id).shape();
            Tensor::zeros(r, c)
        };
        Self {
            config,
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
            step: 0,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update using the gradients currently stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (k, &id) in self.ids.iter().enumerate() {
            let grad = store.grad(id).data().to_vec();
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            let value = store.value_mut(id).data_mut();
            for j in 0..grad.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                value[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Moment buffers as named tensors, for checkpointing.
    pub fn state(&self, prefix: &str, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = vec![(format!("{prefix}.step"), Tensor::scalar(self.step as f64))];
        for (k, &id) in self.ids.iter().enumerate() {
            out.push((format!("{prefix}.m.{}", store.name(id)), self.m[k].clone()));
            out.push((format!("{prefix}.v.{}", store.name(id)), self.v[k].clone()));
        }
        out
    }

    pub fn load_state(
        &mut self,
        prefix: &str,
        store: &ParamStore,
        lookup: &dyn Fn(&str) -> Option<Tensor>,
    ) -> Result<(), NnError> {
        let step_name = format!("{prefix}.step");
        let step = lookup(&step_name).ok_or_else(|| NnError::Checkpoint(format!("missing {step_name}")))?;
        self.step = step.item() as u64;
        for (k, &id) in self.ids.iter().enumerate() {
            for (buf, kind) in [(&mut self.m[k], "m"), (&mut self.v[k], "v")] {
                let name = format!("{prefix}.{kind}.{}", store.name(id));
                let t = lookup(&name).ok_or_else(|| NnError::Checkpoint(format!("missing {name}")))?;
                if t.shape() != buf.shape() {
                    return Err(NnError::ParamShape {
                        name,
                        expected: buf.shape(),
                        found: t.shape(),
                    });
                }
                *buf = t;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(&[1.0, -1.0]));
        store.grad_mut(id).data_mut().copy_from_slice(&[3.0, -0.5]);
        let mut adam = Adam::new(&store, vec![id], AdamConfig { lr: 0.1, eps: 0.0, ..AdamConfig::default() });
        adam.step(&mut store);
        let v = store.value(id).data();
        assert!((v[0] - 0.9).abs() < 1e-12);
        assert!((v[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_leaves_params_bit_identical() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(&[0.123, -4.5]));
        store.grad_mut(id).data_mut().copy_from_slice(&[1.0, 2.0]);
        let before = store.clone();
        let mut adam = Adam::new(&store, vec![id], AdamConfig { lr: 0.0, ..AdamConfig::default() });
        adam.step(&mut store);
        assert_eq!(store.value(id), before.value(id));
    }
}
