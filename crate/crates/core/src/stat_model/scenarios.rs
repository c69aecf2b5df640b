use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use super::{ContributionModel, StatError};
use crate::seeding;

/// Smallest number of trials accepted by [`estimate_scenarios`].
pub const MIN_TRIALS: usize = 1000;

/// Trials per independently seeded block.
pub(crate) const BLOCK: usize = 2048;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// No pruning.
    Original,
    /// A uniformly chosen filter removed from the second layer.
    SecondRandom,
    /// The lowest-contribution filter removed from the second layer.
    SecondLowest,
    /// The lowest-contribution filter removed from the first layer.
    FirstLowest,
    /// The global minimum removed: first-layer case with weight m/(m+n),
    /// second-layer case with weight n/(m+n).
    GlobalLowest,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Original,
        Scenario::SecondRandom,
        Scenario::SecondLowest,
        Scenario::FirstLowest,
        Scenario::GlobalLowest,
    ];

    /// Expected order, smallest first: fl <= gl <= sr <= sl <= o.
    pub const ORDER: [Scenario; 5] = [
        Scenario::FirstLowest,
        Scenario::GlobalLowest,
        Scenario::SecondRandom,
        Scenario::SecondLowest,
        Scenario::Original,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Original => "v_o",
            Scenario::SecondRandom => "v_sr",
            Scenario::SecondLowest => "v_sl",
            Scenario::FirstLowest => "v_fl",
            Scenario::GlobalLowest => "v_gl",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Survival probabilities of each layer under each removal, the building
/// blocks of the scenario values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentProbabilities {
    /// P(sum xi >= a)
    pub first_full: f64,
    /// P(sum xi - (k smallest xi) >= a)
    pub first_drop_lowest: f64,
    /// P(sum eta >= b)
    pub second_full: f64,
    /// P(sum eta - (k random eta) >= b)
    pub second_drop_random: f64,
    /// P(sum eta - (k smallest eta) >= b)
    pub second_drop_lowest: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioEstimates {
    pub v_o: f64,
    pub v_sr: f64,
    pub v_sl: f64,
    pub v_fl: f64,
    pub v_gl: f64,
    /// 95% half-widths, indexed like [`Scenario::ALL`].
    pub half_width: [f64; 5],
    pub components: ComponentProbabilities,
    /// 95% half-widths of the component probabilities, in field order.
    pub component_half_width: [f64; 5],
    pub trials: usize,
    pub seed: u64,
    /// Filters removed per scenario (1 for the classic five scenarios).
    pub drop_k: usize,
}

impl ScenarioEstimates {
    pub fn value(&self, s: Scenario) -> f64 {
        match s {
            Scenario::Original => self.v_o,
            Scenario::SecondRandom => self.v_sr,
            Scenario::SecondLowest => self.v_sl,
            Scenario::FirstLowest => self.v_fl,
            Scenario::GlobalLowest => self.v_gl,
        }
    }

    pub fn half_width_of(&self, s: Scenario) -> f64 {
        self.half_width[s.index()]
    }

    /// CSV with header `scenario,estimate,half_width`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,estimate,half_width\n");
        for s in Scenario::ALL {
            out.push_str(&format!(
                "{},{:.16e},{:.16e}\n",
                s.label(),
                self.value(s),
                self.half_width_of(s)
            ));
        }
        out
    }
}

/// Integer tallies for a block of trials. Everything is exact integer
/// arithmetic, so block results can be combined in any order.
#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    trials: u64,
    first_full: u64,
    first_drop: u64,
    second_full: u64,
    second_random: u64,
    second_lowest: u64,
    /// Sum and sum of squares of the per-trial values of v_o, v_sr, v_sl, v_fl
    /// (each in {0, 1, 2}).
    sums: [u64; 4],
    squares: [u64; 4],
    /// v_gl per trial is `numerator / (m + n)`.
    gl_sum: u128,
    gl_square: u128,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.trials += o.trials;
        self.first_full += o.first_full;
        self.first_drop += o.first_drop;
        self.second_full += o.second_full;
        self.second_random += o.second_random;
        self.second_lowest += o.second_lowest;
        for i in 0..4 {
            self.sums[i] += o.sums[i];
            self.squares[i] += o.squares[i];
        }
        self.gl_sum += o.gl_sum;
        self.gl_square += o.gl_square;
        self
    }
}

/// Sum of the `k` smallest entries; reorders `xs`.
fn sum_of_smallest(xs: &mut [f64], k: usize) -> f64 {
    if k == 1 {
        return xs.iter().copied().fold(f64::INFINITY, f64::min);
    }
    let (lo, pivot, _) = xs.select_nth_unstable_by(k - 1, f64::total_cmp);
    lo.iter().sum::<f64>() + *pivot
}

fn run_block(model: &ContributionModel, seed: u64, block: u64, trials: usize, k: usize) -> Tally {
    let mut rng = seeding::block_rng(seed, block);
    let (m, n) = (model.m(), model.n());
    let (a, b) = (model.a(), model.b());
    let mut xi = vec![0.0; m];
    let mut eta = vec![0.0; n];
    let mut t = Tally {
        trials: trials as u64,
        ..Tally::default()
    };
    for _ in 0..trials {
        model.sample_first(&mut rng, &mut xi);
        model.sample_second(&mut rng, &mut eta);
        let xi_sum: f64 = xi.iter().sum();
        let eta_sum: f64 = eta.iter().sum();
        let eta_random: f64 = if k == 1 {
            eta[rng.random_range(0..n)]
        } else {
            index::sample(&mut rng, n, k).iter().map(|i| eta[i]).sum()
        };
        let xi_low = sum_of_smallest(&mut xi, k);
        let eta_low = sum_of_smallest(&mut eta, k);

        let a_full = u64::from(xi_sum >= a);
        let a_drop = u64::from(xi_sum - xi_low >= a);
        let b_full = u64::from(eta_sum >= b);
        let b_random = u64::from(eta_sum - eta_random >= b);
        let b_low = u64::from(eta_sum - eta_low >= b);

        t.first_full += a_full;
        t.first_drop += a_drop;
        t.second_full += b_full;
        t.second_random += b_random;
        t.second_lowest += b_low;

        let values = [
            a_full + b_full,
            a_full + b_random,
            a_full + b_low,
            a_drop + b_full,
        ];
        for (i, v) in values.into_iter().enumerate() {
            t.sums[i] += v;
            t.squares[i] += v * v;
        }
        let gl = m as u128 * u128::from(a_drop + b_full) + n as u128 * u128::from(a_full + b_low);
        t.gl_sum += gl;
        t.gl_square += gl * gl;
    }
    t
}

fn tally(model: &ContributionModel, trials: usize, seed: u64, k: usize) -> Tally {
    let blocks = trials.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let len = BLOCK.min(trials - blk * BLOCK);
            run_block(model, seed, blk as u64, len, k)
        })
        .reduce(Tally::default, Tally::merge)
}

/// Mean and 95% half-width of a per-trial value given as `numerator / scale`,
/// from exact integer sums.
fn mean_and_half_width(sum: u128, square: u128, trials: u64, scale: f64) -> (f64, f64) {
    let t = trials as f64;
    let mean = sum as f64 / (t * scale);
    if trials < 2 {
        return (mean, 0.0);
    }
    // T * sum(x^2) - (sum x)^2 >= 0, computed exactly.
    let centered = u128::from(trials) * square - sum * sum;
    let var = centered as f64 / (t * (t - 1.0) * scale * scale);
    (mean, Z95 * (var / t).sqrt())
}

fn proportion(count: u64, trials: u64) -> (f64, f64) {
    mean_and_half_width(u128::from(count), u128::from(count), trials, 1.0)
}

/// Monte Carlo estimates of the five scenario values with one filter removed.
///
/// Every trial draws one joint sample that serves all five scenarios (common
/// random numbers). The result depends only on `(model, trials, seed)`, not on
/// the number of worker threads.
pub fn estimate_scenarios(
    model: &ContributionModel,
    trials: usize,
    seed: u64,
) -> Result<ScenarioEstimates, StatError> {
    estimate_scenarios_k(model, trials, seed, 1)
}

/// As [`estimate_scenarios`], removing `k` filters per scenario instead of one.
pub fn estimate_scenarios_k(
    model: &ContributionModel,
    trials: usize,
    seed: u64,
    k: usize,
) -> Result<ScenarioEstimates, StatError> {
    if trials < MIN_TRIALS {
        return Err(StatError::TooFewTrials {
            trials,
            min: MIN_TRIALS,
        });
    }
    if k == 0 || k > model.m() || k > model.n() {
        return Err(StatError::InvalidModel(format!(
            "cannot drop {k} filters from layers of size {} and {}",
            model.m(),
            model.n()
        )));
    }
    let t = tally(model, trials, seed, k);
    let mut values = [0.0; 5];
    let mut half_width = [0.0; 5];
    for i in 0..4 {
        let (v, h) = mean_and_half_width(
            u128::from(t.sums[i]),
            u128::from(t.squares[i]),
            t.trials,
            1.0,
        );
        values[i] = v;
        half_width[i] = h;
    }
    let (v_gl, h_gl) = mean_and_half_width(
        t.gl_sum,
        t.gl_square,
        t.trials,
        (model.m() + model.n()) as f64,
    );
    values[4] = v_gl;
    half_width[4] = h_gl;

    let comps = [
        proportion(t.first_full, t.trials),
        proportion(t.first_drop, t.trials),
        proportion(t.second_full, t.trials),
        proportion(t.second_random, t.trials),
        proportion(t.second_lowest, t.trials),
    ];
    Ok(ScenarioEstimates {
        v_o: values[0],
        v_sr: values[1],
        v_sl: values[2],
        v_fl: values[3],
        v_gl: values[4],
        half_width,
        components: ComponentProbabilities {
            first_full: comps[0].0,
            first_drop_lowest: comps[1].0,
            second_full: comps[2].0,
            second_drop_random: comps[3].0,
            second_drop_lowest: comps[4].0,
        },
        component_half_width: comps.map(|c| c.1),
        trials,
        seed,
        drop_k: k,
    })
}

/// One checked inequality `lower <= upper` (up to `slack`).
#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub lower: &'static str,
    pub upper: &'static str,
    /// `upper - lower`; negative means the raw estimates are out of order.
    pub margin: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    /// v_fl <= v_gl, v_gl <= v_sr, v_sr <= v_sl, v_sl <= v_o.
    pub scenario_pairs: Vec<PairCheck>,
    /// P(sum eta - eta_r >= b) <= P(sum eta - min eta >= b) <= P(sum eta >= b).
    pub second_layer_chain: Vec<PairCheck>,
}

impl OrderingReport {
    pub fn all_hold(&self) -> bool {
        self.scenario_pairs.iter().all(|p| p.holds) && self.second_layer_chain.iter().all(|p| p.holds)
    }

    pub fn violations(&self) -> Vec<(&'static str, &'static str)> {
        self.scenario_pairs
            .iter()
            .chain(&self.second_layer_chain)
            .filter(|p| !p.holds)
            .map(|p| (p.lower, p.upper))
            .collect()
    }
}

fn pair(lower: &'static str, upper: &'static str, lo: f64, hi: f64, slack: f64) -> PairCheck {
    let margin = hi - lo;
    PairCheck {
        lower,
        upper,
        margin,
        slack,
        holds: margin + slack >= 0.0,
    }
}

/// Checks the chain `v_fl <= v_gl <= v_sr <= v_sl <= v_o`.
///
/// With `slack = None` each adjacent pair is allowed the sum of the two
/// half-widths; otherwise the given fixed slack is used everywhere.
pub fn check_ordering(estimates: &ScenarioEstimates, slack: Option<f64>) -> OrderingReport {
    let scenario_pairs = Scenario::ORDER
        .windows(2)
        .map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let s = slack.unwrap_or(estimates.half_width_of(lo) + estimates.half_width_of(hi));
            pair(lo.label(), hi.label(), estimates.value(lo), estimates.value(hi), s)
        })
        .collect();
    let c = &estimates.components;
    let hw = &estimates.component_half_width;
    let second_layer_chain = vec![
        pair(
            "P(drop random)",
            "P(drop lowest)",
            c.second_drop_random,
            c.second_drop_lowest,
            slack.unwrap_or(hw[3] + hw[4]),
        ),
        pair(
            "P(drop lowest)",
            "P(full)",
            c.second_drop_lowest,
            c.second_full,
            slack.unwrap_or(hw[4] + hw[2]),
        ),
    ];
    OrderingReport {
        scenario_pairs,
        second_layer_chain,
    }
}
