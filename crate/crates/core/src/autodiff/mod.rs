//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive executed on it together with the data
//! its backward rule needs. [`Tape::backward`] consumes the tape and returns
//! the gradients of all leaves created with `requires_grad`.
//!
//! Everything is `f64`. One tape belongs to one thread; independent tapes can
//! be used concurrently.

mod checkpoint;
mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, NamedTensor};
pub use gradcheck::{gradcheck, gradcheck_with, Coords, GradcheckReport, RELATIVE_FLOOR};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

/// Errors raised by tensor primitives and the tape.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("cross_entropy: label {label} at batch index {index} is out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
}

pub(crate) fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument {
        op,
        msg: msg.into(),
    }
}
