use rayon::prelude::*;

use super::scenarios::BLOCK;
use super::{ContributionModel, ModelConfig, StatError};
use crate::seeding;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub n: usize,
    pub epsilon: f64,
    /// Monte Carlo estimate of P(|sum(eta_i - E eta_i)| / n >= epsilon).
    pub empirical_lhs: f64,
    /// Binomial standard error of `empirical_lhs`.
    pub standard_error: f64,
    /// C1 (1 + C2) / (epsilon^2 n).
    pub chebyshev_rhs: f64,
    /// `empirical_lhs <= chebyshev_rhs + 3 * standard_error`.
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub empirical_lhs: f64,
    pub standard_error: f64,
    pub chebyshev_rhs: f64,
    /// P(sum eta > b)
    pub p_sum_exceeds_b: f64,
    /// P(sum eta - min eta > b)
    pub p_sum_minus_min_exceeds_b: f64,
    /// Whether `n > 2 b / eps0`, the regime where both probabilities above
    /// are driven to one.
    pub beyond_threshold: bool,
}

/// Upper bound C1 (1 + C2) / (epsilon^2 n) on the deviation probability of the
/// second-layer mean, from the variance bound C1 and correlated-pair fraction C2.
pub fn chebyshev_rhs(model: &ContributionModel, epsilon: f64) -> f64 {
    let cfg = model.config();
    cfg.variance_cap * (1.0 + cfg.corr_pair_fraction) / (epsilon * epsilon * model.n() as f64)
}

#[derive(Default, Clone, Copy)]
struct Counts {
    trials: u64,
    deviations: u64,
    sum_exceeds: u64,
    sum_minus_min_exceeds: u64,
}

fn count_deviations(model: &ContributionModel, epsilon: f64, trials: usize, seed: u64) -> Counts {
    let n = model.n();
    let mean = model.second_mean();
    let b = model.b();
    let blocks = trials.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let len = BLOCK.min(trials - blk * BLOCK);
            let mut rng = seeding::block_rng(seed, blk as u64);
            let mut eta = vec![0.0; n];
            let mut c = Counts {
                trials: len as u64,
                ..Counts::default()
            };
            for _ in 0..len {
                model.sample_second(&mut rng, &mut eta);
                let sum: f64 = eta.iter().sum();
                let low = eta.iter().copied().fold(f64::INFINITY, f64::min);
                let centered: f64 = eta.iter().map(|x| x - mean).sum();
                c.deviations += u64::from((centered / n as f64).abs() >= epsilon);
                c.sum_exceeds += u64::from(sum > b);
                c.sum_minus_min_exceeds += u64::from(sum - low > b);
            }
            c
        })
        .reduce(Counts::default, |x, y| Counts {
            trials: x.trials + y.trials,
            deviations: x.deviations + y.deviations,
            sum_exceeds: x.sum_exceeds + y.sum_exceeds,
            sum_minus_min_exceeds: x.sum_minus_min_exceeds + y.sum_minus_min_exceeds,
        })
}

fn binomial_se(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

pub fn chebyshev_bound_check(
    model: &ContributionModel,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundReport, StatError> {
    if !(epsilon > 0.0) {
        return Err(StatError::NonPositiveEpsilon(epsilon));
    }
    if trials == 0 {
        return Err(StatError::TooFewTrials { trials, min: 1 });
    }
    let c = count_deviations(model, epsilon, trials, seed);
    let lhs = c.deviations as f64 / c.trials as f64;
    let se = binomial_se(lhs, c.trials);
    let rhs = chebyshev_rhs(model, epsilon);
    Ok(BoundReport {
        n: model.n(),
        epsilon,
        empirical_lhs: lhs,
        standard_error: se,
        chebyshev_rhs: rhs,
        satisfied: lhs <= rhs + 3.0 * se,
    })
}

/// Deviation probability of the second-layer mean for each `n`, with every
/// other parameter taken from `template`.
pub fn convergence_sweep(
    template: &ModelConfig,
    n_values: &[usize],
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, StatError> {
    if n_values.is_empty() {
        return Err(StatError::EmptySweep);
    }
    if !n_values.windows(2).all(|w| w[0] < w[1]) {
        return Err(StatError::SweepNotIncreasing);
    }
    if !(epsilon > 0.0) {
        return Err(StatError::NonPositiveEpsilon(epsilon));
    }
    n_values
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let model = ContributionModel::new(ModelConfig {
                n,
                ..template.clone()
            })?;
            let c = count_deviations(&model, epsilon, trials, seeding::derive(seed, i as u64));
            let lhs = c.deviations as f64 / c.trials as f64;
            Ok(SweepRow {
                n,
                empirical_lhs: lhs,
                standard_error: binomial_se(lhs, c.trials),
                chebyshev_rhs: chebyshev_rhs(&model, epsilon),
                p_sum_exceeds_b: c.sum_exceeds as f64 / c.trials as f64,
                p_sum_minus_min_exceeds_b: c.sum_minus_min_exceeds as f64 / c.trials as f64,
                beyond_threshold: n as f64 > 2.0 * model.b() / model.config().mean_floor,
            })
        })
        .collect()
}

/// CSV with header `n,empirical_lhs,chebyshev_rhs`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("n,empirical_lhs,chebyshev_rhs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.16e},{:.16e}\n",
            r.n, r.empirical_lhs, r.chebyshev_rhs
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stat_model::DistributionSpec;

    fn template(n: usize) -> ModelConfig {
        let u = DistributionSpec::uniform(0.5, 1.5).unwrap();
        ModelConfig::with_defaults(10, n, u, u)
    }

    #[test]
    fn rhs_formula() {
        let mut cfg = template(1000);
        cfg.corr_pair_fraction = 0.1;
        let model = ContributionModel::new(cfg).unwrap();
        let rhs = chebyshev_rhs(&model, 0.1);
        assert!((rhs - (1.0 / 12.0) * 1.1 / (0.01 * 1000.0)).abs() < 1e-15);
        let indep = ContributionModel::new(template(1000)).unwrap();
        assert_eq!(chebyshev_rhs(&indep, 0.5), (1.0 / 12.0) / (0.25 * 1000.0));
    }

    #[test]
    fn huge_epsilon_never_deviates() {
        let model = ContributionModel::new(template(100)).unwrap();
        let r = chebyshev_bound_check(&model, 1e6, 2000, 3).unwrap();
        assert_eq!(r.empirical_lhs, 0.0);
        assert!(r.satisfied);
    }

    #[test]
    fn bound_holds_at_moderate_n() {
        let model = ContributionModel::new(template(1000)).unwrap();
        let r = chebyshev_bound_check(&model, 0.1, 5000, 9).unwrap();
        assert!(r.empirical_lhs <= r.chebyshev_rhs, "{r:?}");
    }

    #[test]
    fn precondition_errors() {
        let model = ContributionModel::new(template(10)).unwrap();
        assert!(chebyshev_bound_check(&model, 0.0, 100, 0).is_err());
        assert!(convergence_sweep(&template(10), &[], 0.1, 100, 0).is_err());
        assert!(convergence_sweep(&template(10), &[100, 10], 0.1, 100, 0).is_err());
        assert!(convergence_sweep(&template(10), &[10, 100], 0.0, 100, 0).is_err());
    }

    #[test]
    fn exact_sum_variance_stays_below_c1_bound_for_moderate_strength() {
        let mut cfg = template(1000);
        cfg.corr_pair_fraction = 0.3;
        cfg.corr_strength = 0.5;
        let model = ContributionModel::new(cfg).unwrap();
        let bound = model.config().variance_cap * (1.0 + 0.3) * 1000.0;
        assert!(model.second_sum_variance() <= bound);
    }
}
