//! Dense `f64` tensors with a dynamic reverse-mode tape.
//!
//! The tape is rebuilt for every forward pass. Each op appends a node holding
//! its value and operands; [`Tape::backward`] walks the nodes once in reverse
//! order and returns fresh [`Gradients`], so repeated calls are independent.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, RELATIVE_FLOOR};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward() needs a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("{0} needs at least one operand")]
    EmptyOperands(&'static str),
}
