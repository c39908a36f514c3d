//! Dense `f64` tensors with tape-based reverse-mode differentiation, Adam,
//! inverted dropout and a portable seeded generator.
//!
//! Every operation checks its output for NaN/Inf and fails with
//! [`TensorError::NonFinite`] instead of propagating it.

mod adam;
mod rng;
mod tape;
mod tensor;


pub use adam::AdamState;
pub use rng::Rng;
pub use tape::{backward, backward_into, softmax, softmax_cross_entropy, Tape, Var};
pub use tensor::{Gradients, ParamId, ParamStore, Tensor};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("{0}")]
    Contract(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}
