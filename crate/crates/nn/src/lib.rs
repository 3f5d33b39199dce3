//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records operations on [`Tensor`]s as they run; a single
//! reverse sweep then produces gradients for every recorded parameter.
//! Learnable tensors live in a [`ParamStore`] and are bound into a graph per
//! forward pass. On top of that sit the layers an actor-critic agent needs
//! (affine maps, layer normalization, GRU cells, multi-head attention), an
//! Adam optimizer and a little-endian checkpoint container.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use graph::{Graph, NodeId};
pub use layers::{AttentionOutput, Gru, LayerNorm, Linear, MultiHeadAttention};
pub use optim::{Adam, AdamConfig};
pub use params::{clip_grad_norm, grad_norm, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("parameter {name}: expected shape {expected:?}, found {found:?}")]
    ParamShape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{0}")]
    Usage(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NnError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Self::Shape { op, left, right }
    }
}
