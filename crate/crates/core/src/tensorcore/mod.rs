//! Dense tensors, a recording tape for reverse-mode gradients, the CNN
//! primitives built on it, and momentum SGD.

mod forward;
mod gradcheck;
pub(crate) mod kernels;
mod optim;
mod tape;
mod tensor;

pub use forward::{forward, predict, ForwardPass, NetGradients};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use optim::{sgd_step, OptimizerState};
pub use tape::{Gradients, Tape, ValueId};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("tape already differentiated")]
    TapeConsumed,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}
