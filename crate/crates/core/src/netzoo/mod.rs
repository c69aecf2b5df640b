//! Network topologies, weight initialization, redundancy injection
//! (widening) and filter-removal surgery.

mod network;
mod spec;
mod surgery;
mod weights_io;

pub use network::{LayerParams, Network, OUTPUT_INIT_SCALE};
pub use spec::{ActShape, LayerSpec, NetworkSpec};
pub use surgery::{remove_filters, widen_layer, zero_outgoing};
pub use weights_io::{load_weights, save_weights};

use crate::tensorcore::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("conv index {index} out of range ({convs} conv layers)")]
    NotAConvLayer { index: usize, convs: usize },
    #[error("conv layer {0} has no downstream weight-bearing layer")]
    NoConsumer(usize),
    #[error("widening factor must be >= 2, got {0}")]
    InvalidFactor(usize),
    #[error("invalid filter ids: {0}")]
    InvalidFilterIds(String),
    #[error("removal would empty conv layer {conv_index} ({filters} filters)")]
    WouldEmptyLayer { conv_index: usize, filters: usize },
    #[error("weight file: {0}")]
    WeightFormat(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
