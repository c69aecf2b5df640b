//! Taylor saliency, filter-selection strategies and the prune / fine-tune
//! loop.

mod finetune;
mod saliency;
mod strategy;
pub mod train;

pub use finetune::{
    aggregate, mean_std, prune_finetune_loop, records_csv, ExperimentRecord, PruneSchedule, StepRecord,
    StopRule, CSV_HEADER,
};
pub use saliency::{spearman, taylor_scores, taylor_scores_raw, SaliencyMap};
pub use strategy::{apply_selection, select_filters, FilterRef, LayerRule, Strategy};

use crate::netzoo::NetError;
use crate::tensorcore::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum PruneError {
    #[error("no data batches supplied")]
    EmptyStream,
    #[error("Taylor strategies need saliency scores")]
    MissingScores,
    #[error("scores cover layers {scores:?} but the network census is {census:?}")]
    StaleScores { scores: Vec<usize>, census: Vec<usize> },
    #[error("conv layer {index} does not exist ({convs} conv layers)")]
    NoSuchLayer { index: usize, convs: usize },
    #[error("conv layer {layer} has {filters} filters; pruning {k} needs at least {}", k + 1)]
    TargetTooSmall { layer: usize, filters: usize, k: usize },
    #[error("only {available} filters can be pruned without emptying a layer, {wanted} requested")]
    NotEnoughFilters { wanted: usize, available: usize },
    #[error("{0}")]
    BadStrategy(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
