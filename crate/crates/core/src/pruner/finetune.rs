//! The iterative score / select / remove / fine-tune / evaluate loop and
//! aggregation of its repetitions.

use std::fmt::Write as _;
use std::time::Instant;

use super::train::{accuracy, train_updates, EpochSampler, SgdConfig};
use super::{apply_selection, select_filters, taylor_scores, PruneError, Strategy};
use crate::harness::Splits;
use crate::netzoo::Network;
use crate::seeding;

/// When the loop stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    Steps(usize),
    /// Stop once this fraction of `target_filters` has been pruned.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneSchedule {
    pub filters_per_step: usize,
    pub finetune_updates: usize,
    pub stop: StopRule,
    /// Denominator of `frac_pruned`: the filter pool the experiment is
    /// about (added filters, or all filters).
    pub target_filters: usize,
    pub repetitions: usize,
    pub sgd: SgdConfig,
    /// Score-split batches used for saliency; 0 means the whole split.
    pub score_batches: usize,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        Self {
            filters_per_step: 2,
            finetune_updates: 50,
            stop: StopRule::Fraction(0.5),
            target_filters: 1,
            repetitions: 5,
            sgd: SgdConfig::finetune(),
            score_batches: 0,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<(), PruneError> {
        let bad = |m: &str| Err(PruneError::InvalidSchedule(m.into()));
        if self.filters_per_step == 0 {
            return bad("filters_per_step must be at least 1");
        }
        if self.target_filters == 0 {
            return bad("target_filters must be at least 1");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.sgd.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if let StopRule::Fraction(f) = self.stop {
            if !(f.is_finite() && f >= 0.0) {
                return bad("stop fraction must be a non-negative number");
            }
        }
        Ok(())
    }

    /// Number of pruning steps the stop rule asks for.
    pub fn steps(&self) -> usize {
        match self.stop {
            StopRule::Steps(n) => n,
            StopRule::Fraction(f) => {
                let filters = (f * self.target_filters as f64).ceil() as usize;
                filters.div_ceil(self.filters_per_step)
            }
        }
    }
}

/// One point of a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub cum_pruned: usize,
    pub accuracy: f64,
    pub census: Vec<usize>,
    pub params: usize,
    pub seconds: f64,
    /// Set on the last record when the loop stopped before its schedule
    /// because no valid selection existed.
    pub halted: Option<String>,
}

fn record(step: usize, cum: usize, net: &Network, acc: f64, start: &Instant) -> StepRecord {
    StepRecord {
        step,
        cum_pruned: cum,
        accuracy: acc,
        census: net.census(),
        params: net.param_count(),
        seconds: start.elapsed().as_secs_f64(),
        halted: None,
    }
}

/// Prunes `net` step by step. Record 0 is the unpruned baseline; record `i`
/// follows the `i`-th removal and its fine-tuning. Saliency is recomputed on
/// the score split before every Taylor selection.
pub fn prune_finetune_loop(
    net: &Network,
    strategy: Strategy,
    schedule: &PruneSchedule,
    splits: &Splits,
    seed: u64,
) -> Result<Vec<StepRecord>, PruneError> {
    schedule.validate()?;
    let start = Instant::now();
    let mut score_batches = splits.score.chunks(schedule.sgd.batch_size);
    if schedule.score_batches > 0 {
        score_batches.truncate(schedule.score_batches);
    }
    let mut sampler = EpochSampler::new(splits.train.len(), seeding::derive(seed, 1));
    let mut net = net.clone();
    let mut cum = 0;
    let mut records = vec![record(0, 0, &net, accuracy(&net, &splits.test)?, &start)];
    for step in 1..=schedule.steps() {
        let scores = if strategy.needs_scores() {
            Some(taylor_scores(&net, &score_batches)?)
        } else {
            None
        };
        let chosen = select_filters(
            strategy,
            scores.as_ref(),
            &net.census(),
            schedule.filters_per_step,
            seeding::derive(seed, 1000 + step as u64),
        );
        let chosen = match chosen {
            Ok(c) => c,
            Err(e @ (PruneError::TargetTooSmall { .. } | PruneError::NotEnoughFilters { .. })) => {
                records.last_mut().expect("baseline").halted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        net = apply_selection(&net, &chosen)?;
        cum += chosen.len();
        train_updates(&mut net, &splits.train, &mut sampler, schedule.finetune_updates, &schedule.sgd)?;
        records.push(record(step, cum, &net, accuracy(&net, &splits.test)?, &start));
    }
    Ok(records)
}

/// Repetition-aggregated point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub step: usize,
    pub cum_pruned: usize,
    pub frac_pruned: f64,
    pub accuracy_mean: f64,
    /// Sample standard deviation over repetitions; 0 for a single run.
    pub accuracy_std: f64,
    /// Census of each repetition, in repetition order.
    pub census: Vec<Vec<usize>>,
    /// Mean wall-clock seconds since the loop started.
    pub seconds: f64,
    pub halted: bool,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Combines repetitions step by step, up to the shortest run.
pub fn aggregate(runs: &[Vec<StepRecord>], target_filters: usize) -> Vec<ExperimentRecord> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let accs: Vec<f64> = runs.iter().map(|r| r[i].accuracy).collect();
            let (accuracy_mean, accuracy_std) = mean_std(&accs);
            let first = &runs[0][i];
            ExperimentRecord {
                step: first.step,
                cum_pruned: first.cum_pruned,
                frac_pruned: first.cum_pruned as f64 / target_filters as f64,
                accuracy_mean,
                accuracy_std,
                census: runs.iter().map(|r| r[i].census.clone()).collect(),
                seconds: runs.iter().map(|r| r[i].seconds).sum::<f64>() / runs.len() as f64,
                halted: runs.iter().any(|r| r[i].halted.is_some()),
            }
        })
        .collect()
}

pub const CSV_HEADER: &str = "step,cum_pruned,frac_pruned,accuracy_mean,accuracy_std,layer_census";

/// Census column: `16/32/64/32`, or one such group per repetition joined by
/// `|` when repetitions disagree.
fn census_field(census: &[Vec<usize>]) -> String {
    let one = |c: &Vec<usize>| c.iter().map(usize::to_string).collect::<Vec<_>>().join("/");
    if census.windows(2).all(|w| w[0] == w[1]) {
        census.first().map(one).unwrap_or_default()
    } else {
        census.iter().map(one).collect::<Vec<_>>().join("|")
    }
}

/// CSV with `#` comment lines first. Wall-clock time is left out so that
/// reruns compare byte for byte.
pub fn records_csv(records: &[ExperimentRecord], comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{}",
            r.step,
            r.cum_pruned,
            r.frac_pruned,
            r.accuracy_mean,
            r.accuracy_std,
            census_field(&r.census)
        );
    }
    out
}
