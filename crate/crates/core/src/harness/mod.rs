//! Data ingestion and experiment orchestration.

pub mod cifar;
mod config;
mod dataset;
mod experiment;
mod synthetic;

pub use cifar::load_cifar10;
pub use config::{Architecture, DataKind, ExperimentConfig, Target};
pub use dataset::{Batch, Dataset, Splits};
pub use experiment::{
    config_hash, csv_comments, git_blob_hash, resolve_architecture, run_experiment, run_strategies, schedule,
    target_filters, train_base, write_csvs, BaseRun, DataSource, DatasetSpec, ExperimentOutcome, DATA_ENV,
    MANIFEST,
};
pub use synthetic::{gen_synthetic, SyntheticSpec};

pub use crate::pruner::ExperimentRecord;

use crate::netzoo::NetError;
use crate::pruner::PruneError;
use crate::tensorcore::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("missing dataset: {0}")]
    MissingData(String),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Prune(#[from] PruneError),
}
