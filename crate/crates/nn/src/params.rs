//! Named parameter tensors with gradient buffers.

use crate::tensor::Tensor;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Owns every learnable tensor of a model; gradients share each value's shape.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Replaces the value of `id`, keeping its shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<(), NnError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(NnError::ParamShape {
                name: p.name.clone(),
                expected: p.value.shape(),
                found: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }
}

/// Global L2 norm of the gradients of `ids`.
pub fn grad_norm(store: &ParamStore, ids: &[ParamId]) -> f64 {
    ids.iter().map(|&id| store.grad(id).sum_squares()).sum::<f64>().sqrt()
}

/// Rescales the gradients of `ids` so their global norm is at most
/// `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, ids: &[ParamId], max_norm: f64) -> f64 {
    let norm = grad_norm(store, ids);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / (norm + 1e-6);
        for &id in ids {
            for g in store.grad_mut(id).data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}
