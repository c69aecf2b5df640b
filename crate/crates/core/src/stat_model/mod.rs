//! Two-layer statistical model of filter contributions.
//!
//! A layer "survives" pruning when the summed contribution of its remaining
//! filters stays above a threshold (`a` for the first layer, `b` for the
//! second). Network performance is the sum of the two survival probabilities,
//! so every scenario value lies in `[0, 2]`. The five scenarios compare
//! removing a random or a lowest-ranked filter from the large second layer,
//! the lowest-ranked filter from the small first layer, and the globally
//! lowest-ranked filter.

mod bounds;
mod distribution;
mod model;
mod scenarios;

pub use bounds::{chebyshev_bound_check, chebyshev_rhs, convergence_sweep, sweep_csv, BoundReport, SweepRow};
pub use distribution::{DistributionSpec, Family};
pub use model::{ContributionModel, Contributions, ModelConfig};
pub use scenarios::{
    check_ordering, estimate_scenarios, estimate_scenarios_k, ComponentProbabilities,
    OrderingReport, PairCheck, Scenario, ScenarioEstimates, MIN_TRIALS, Z95,
};

#[derive(Debug, thiserror::Error)]
pub enum StatError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("second-layer variance {variance} exceeds the cap C1 = {cap}")]
    VarianceCapExceeded { variance: f64, cap: f64 },
    #[error("second-layer mean {mean} is below the floor eps0 = {floor}")]
    MeanBelowFloor { mean: f64, floor: f64 },
    #[error("{trials} trials requested, at least {min} required")]
    TooFewTrials { trials: usize, min: usize },
    #[error("epsilon must be > 0, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("sweep needs at least one n value")]
    EmptySweep,
    #[error("sweep n values must be strictly increasing")]
    SweepNotIncreasing,
}
