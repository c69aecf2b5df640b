use rand::Rng;

use super::{DistributionSpec, StatError};
use crate::seeding;

/// Raw parameters of the two-layer contribution model, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Filters in the first (small) layer.
    pub m: usize,
    /// Filters in the second (redundant) layer.
    pub n: usize,
    pub first_dist: DistributionSpec,
    pub second_dist: DistributionSpec,
    /// Fraction `C2` of second-layer filters that take part in a correlated pair.
    pub corr_pair_fraction: f64,
    /// Weight of the shared latent term in a correlated pair, in `[0, 1]`.
    pub corr_strength: f64,
    /// Uniform variance bound `C1` on second-layer contributions.
    pub variance_cap: f64,
    /// Uniform mean floor `eps0` on second-layer contributions.
    pub mean_floor: f64,
    /// Survival threshold for the first layer.
    pub a: f64,
    /// Survival threshold for the second layer.
    pub b: f64,
}

impl ModelConfig {
    /// A model with tight moment bounds (`C1` = variance, `eps0` = mean of the
    /// second layer), no correlation, and thresholds at 90% / 80% of the
    /// expected layer sums.
    pub fn with_defaults(
        m: usize,
        n: usize,
        first_dist: DistributionSpec,
        second_dist: DistributionSpec,
    ) -> Self {
        Self {
            m,
            n,
            first_dist,
            second_dist,
            corr_pair_fraction: 0.0,
            corr_strength: 0.0,
            variance_cap: second_dist.variance(),
            mean_floor: second_dist.mean(),
            a: 0.9 * m as f64 * first_dist.mean(),
            b: 0.8 * n as f64 * second_dist.mean(),
        }
    }
}

/// Validated two-layer model of filter contributions.
///
/// Contributions `xi_1..xi_m` (first layer) are i.i.d. draws from
/// `first_dist`. Contributions `eta_1..eta_n` are i.i.d. draws from
/// `second_dist`, except that indices `(2k, 2k+1)` for the first
/// `floor(C2 * n)` pairs share a latent term:
///
/// `eta_2k = (1 - s) X + s Z`, `eta_2k+1 = (1 - s) Y + s Z`
///
/// with `X, Y, Z` i.i.d. from `second_dist` and `s = corr_strength`. This keeps
/// the mean, keeps positivity, never increases the variance, and gives a pair
/// correlation of `s^2 / ((1 - s)^2 + s^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionModel {
    config: ModelConfig,
    correlated_pairs: usize,
    first_mean: f64,
    first_variance: f64,
    second_mean: f64,
    second_variance: f64,
}

/// One joint draw of all filter contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct Contributions {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl ContributionModel {
    pub fn new(config: ModelConfig) -> Result<Self, StatError> {
        if config.m == 0 || config.n == 0 {
            return Err(StatError::InvalidModel(format!(
                "layer sizes must be >= 1 (m = {}, n = {})",
                config.m, config.n
            )));
        }
        for (name, v) in [
            ("corr_pair_fraction", config.corr_pair_fraction),
            ("corr_strength", config.corr_strength),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(StatError::InvalidModel(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        for (name, v) in [("a", config.a), ("b", config.b)] {
            if !v.is_finite() || v < 0.0 {
                return Err(StatError::InvalidModel(format!(
                    "threshold {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        let correlated_pairs = (config.corr_pair_fraction * config.n as f64).floor() as usize;
        if 2 * correlated_pairs > config.n {
            return Err(StatError::InvalidModel(format!(
                "{correlated_pairs} disjoint correlated pairs need {} filters, only n = {}",
                2 * correlated_pairs,
                config.n
            )));
        }
        let second_mean = config.second_dist.mean();
        let second_variance = config.second_dist.variance();
        if !second_variance.is_finite() || second_variance > config.variance_cap {
            return Err(StatError::VarianceCapExceeded {
                variance: second_variance,
                cap: config.variance_cap,
            });
        }
        if second_mean < config.mean_floor {
            return Err(StatError::MeanBelowFloor {
                mean: second_mean,
                floor: config.mean_floor,
            });
        }
        Ok(Self {
            first_mean: config.first_dist.mean(),
            first_variance: config.first_dist.variance(),
            second_mean,
            second_variance,
            correlated_pairs,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn m(&self) -> usize {
        self.config.m
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn a(&self) -> f64 {
        self.config.a
    }

    pub fn b(&self) -> f64 {
        self.config.b
    }

    pub fn correlated_pairs(&self) -> usize {
        self.correlated_pairs
    }

    pub fn first_mean(&self) -> f64 {
        self.first_mean
    }

    pub fn first_variance(&self) -> f64 {
        self.first_variance
    }

    pub fn second_mean(&self) -> f64 {
        self.second_mean
    }

    pub fn second_variance(&self) -> f64 {
        self.second_variance
    }

    /// Correlation between the two members of an injected pair.
    pub fn pair_correlation(&self) -> f64 {
        let s = self.config.corr_strength;
        let shared = s * s;
        let total = (1.0 - s) * (1.0 - s) + shared;
        shared / total
    }

    /// Exact variance of the second-layer sum under the pairing construction.
    pub fn second_sum_variance(&self) -> f64 {
        let s = self.config.corr_strength;
        let var = self.second_variance;
        let paired = 2 * self.correlated_pairs;
        let free = self.config.n - paired;
        let pair_var = ((1.0 - s) * (1.0 - s) + s * s) * var;
        free as f64 * var + paired as f64 * pair_var + 2.0 * self.correlated_pairs as f64 * s * s * var
    }

    pub fn sample_contributions(&self, rng_seed: u64) -> Contributions {
        let mut rng = seeding::rng(rng_seed);
        let mut first = vec![0.0; self.config.m];
        let mut second = vec![0.0; self.config.n];
        self.sample_first(&mut rng, &mut first);
        self.sample_second(&mut rng, &mut second);
        Contributions { first, second }
    }

    pub(crate) fn sample_first<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = &self.config.first_dist;
        for x in out.iter_mut() {
            *x = d.sample(rng);
        }
    }

    pub(crate) fn sample_second<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = &self.config.second_dist;
        for x in out.iter_mut() {
            *x = d.sample(rng);
        }
        let s = self.config.corr_strength;
        for k in 0..self.correlated_pairs {
            // The latent draw is consumed even at s = 0 so that the stream
            // layout does not depend on the correlation strength.
            let z = d.sample(rng);
            out[2 * k] = (1.0 - s) * out[2 * k] + s * z;
            out[2 * k + 1] = (1.0 - s) * out[2 * k + 1] + s * z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stat_model::Family;

    fn uniform_model(n: usize) -> ModelConfig {
        let u = DistributionSpec::uniform(0.5, 1.5).unwrap();
        ModelConfig::with_defaults(10, n, u, u)
    }

    #[test]
    fn caches_closed_form_moments() {
        let model = ContributionModel::new(uniform_model(1000)).unwrap();
        assert_eq!(model.second_mean(), 1.0);
        assert_eq!(model.second_variance(), 1.0 / 12.0);
    }

    #[test]
    fn correlated_pair_count_is_floored() {
        let mut cfg = uniform_model(1000);
        cfg.corr_pair_fraction = 0.05;
        assert_eq!(ContributionModel::new(cfg).unwrap().correlated_pairs(), 50);
        let mut cfg = uniform_model(999);
        cfg.corr_pair_fraction = 0.0999;
        // 0.0999 * 999 = 99.8
        assert_eq!(ContributionModel::new(cfg).unwrap().correlated_pairs(), 99);
    }

    #[test]
    fn mean_floor_violation_is_rejected() {
        // lognormal with mean exp(mu + s^2/2) = 0.4
        let s = 0.5_f64;
        let mu = 0.4_f64.ln() - 0.5 * s * s;
        let d = DistributionSpec::new(Family::LogNormal, mu, s).unwrap();
        assert!((d.mean() - 0.4).abs() < 1e-12);
        let mut cfg = ModelConfig::with_defaults(10, 100, d, d);
        cfg.mean_floor = 0.5;
        assert!(matches!(
            ContributionModel::new(cfg),
            Err(StatError::MeanBelowFloor { .. })
        ));
    }

    #[test]
    fn variance_cap_violation_is_rejected() {
        let mut cfg = uniform_model(100);
        cfg.variance_cap = 0.05;
        assert!(matches!(
            ContributionModel::new(cfg),
            Err(StatError::VarianceCapExceeded { .. })
        ));
    }

    #[test]
    fn too_many_pairs_rejected() {
        let mut cfg = uniform_model(100);
        cfg.corr_pair_fraction = 0.6;
        assert!(ContributionModel::new(cfg).is_err());
        let mut cfg = uniform_model(100);
        cfg.m = 0;
        assert!(ContributionModel::new(cfg).is_err());
    }

    #[test]
    fn samples_are_positive_and_deterministic() {
        let mut cfg = uniform_model(500);
        cfg.corr_pair_fraction = 0.2;
        cfg.corr_strength = 0.7;
        let model = ContributionModel::new(cfg).unwrap();
        for seed in 0..20 {
            let c = model.sample_contributions(seed);
            assert_eq!(c.first.len(), 10);
            assert_eq!(c.second.len(), 500);
            assert!(c.first.iter().chain(&c.second).all(|&x| x > 0.0));
            assert_eq!(c, model.sample_contributions(seed));
        }
    }

    fn pair_correlation(model: &ContributionModel, draws: u64) -> f64 {
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for seed in 0..draws {
            let c = model.sample_contributions(seed);
            let (x, y) = (c.second[0], c.second[1]);
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let n = draws as f64;
        let cov = sxy / n - sx / n * sy / n;
        let vx = sxx / n - (sx / n).powi(2);
        let vy = syy / n - (sy / n).powi(2);
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn zero_strength_pairs_are_uncorrelated() {
        let u = DistributionSpec::uniform(0.5, 1.5).unwrap();
        let mut cfg = ModelConfig::with_defaults(1, 4, u, u);
        cfg.corr_pair_fraction = 0.5;
        let model = ContributionModel::new(cfg).unwrap();
        assert_eq!(model.correlated_pairs(), 2);
        let r = pair_correlation(&model, 100_000);
        assert!(r.abs() < 0.02, "r = {r}");
    }

    #[test]
    fn pair_correlation_matches_closed_form() {
        let u = DistributionSpec::uniform(0.5, 1.5).unwrap();
        let mut cfg = ModelConfig::with_defaults(1, 4, u, u);
        cfg.corr_pair_fraction = 0.5;
        cfg.corr_strength = 0.6;
        let model = ContributionModel::new(cfg).unwrap();
        let expected = 0.36 / (0.16 + 0.36);
        assert!((model.pair_correlation() - expected).abs() < 1e-12);
        let r = pair_correlation(&model, 100_000);
        assert!((r - expected).abs() < 0.02, "r = {r}, expected {expected}");
    }
}
