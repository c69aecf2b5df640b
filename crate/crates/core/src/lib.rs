//! Channel pruning viewed as redundancy reduction.
//!
//! Two halves live in this crate:
//!
//! * [`stat_model`] is a Monte Carlo laboratory for the two-layer
//!   filter-contribution model: five pruning scenarios, their ordering, and
//!   the Chebyshev / weak-law concentration arguments behind it.
//! * [`tensorcore`], [`netzoo`], [`pruner`] and [`harness`] form a small CNN
//!   pruning engine (reverse-mode gradients, filter surgery, Taylor saliency,
//!   prune/finetune loop) used to run desk-scale pruning experiments.

pub mod harness;
pub mod netzoo;
pub mod pruner;
pub mod stat_model;
pub mod tensorcore;

pub(crate) mod seeding;

pub use harness::{ExperimentConfig, ExperimentRecord};
pub use netzoo::{Network, NetworkSpec};
pub use pruner::{PruneSchedule, SaliencyMap, Strategy};
pub use stat_model::{ContributionModel, DistributionSpec, ScenarioEstimates};
pub use tensorcore::Tensor;

