//! Dense `f64` matrices with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records one forward computation against a borrowed
//! [`ParamStore`]. Calling [`Tape::backward`] on a 1×1 node walks the record
//! in reverse and returns gradients for every parameter it reached. Because
//! the store is only borrowed immutably during the forward pass, independent
//! samples can be differentiated on separate tapes in parallel and their
//! gradients reduced afterwards.

mod gradcheck;
mod optim;
mod param;
mod tape;

pub use gradcheck::grad_check;
pub use optim::{AdamState, AdamW};
pub use param::{Param, ParamGrads, ParamId, ParamStore};
pub use tape::{logistic, softmax_rows, Tape, Var};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite input to {op}")]
    NonFiniteInput { op: &'static str },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a 1x1 scalar, got {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
}
