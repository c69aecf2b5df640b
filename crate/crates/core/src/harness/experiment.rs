//! End-to-end runs: data, base training (optionally widened), every strategy
//! over every repetition, CSVs and a manifest.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{Architecture, DataKind, ExperimentConfig, Target};
use super::{cifar, gen_synthetic, HarnessError, Splits, SyntheticSpec};
use crate::netzoo::{save_weights, widen_layer, Network, NetworkSpec};
use crate::pruner::train::{accuracy, train_to_plateau, PlateauConfig, SgdConfig, TrainReport};
use crate::pruner::{aggregate, prune_finetune_loop, records_csv, ExperimentRecord, PruneSchedule, StepRecord, Strategy};
use crate::seeding;

pub const DATA_ENV: &str = "PRUNELAB_DATA";
pub const MANIFEST: &str = "manifest.txt";

/// Where a dataset comes from and how it is split.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Cifar10(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    /// Train, score and test sizes.
    pub sizes: [usize; 3],
    pub seed: u64,
}

impl DatasetSpec {
    /// Resolves the data source of a config. A CIFAR-10 directory comes from
    /// `data_dir`, falling back to `$PRUNELAB_DATA`.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let source = match cfg.dataset {
            DataKind::Synthetic => DataSource::Synthetic(SyntheticSpec {
                separability: cfg.separability,
                ..SyntheticSpec::default()
            }),
            DataKind::Cifar10 => {
                let dir = cfg
                    .data_dir
                    .clone()
                    .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
                    .ok_or_else(|| HarnessError::MissingData(format!("no data_dir and ${DATA_ENV} unset")))?;
                if !cifar::available(&dir) {
                    return Err(HarnessError::MissingData(format!(
                        "{} does not hold the CIFAR-10 binary batches",
                        dir.display()
                    )));
                }
                DataSource::Cifar10(dir)
            }
        };
        Ok(Self {
            source,
            sizes: [cfg.train_size, cfg.score_size, cfg.test_size],
            seed: seeding::derive(cfg.seed, 0xda7a),
        })
    }

    /// Loads and normalizes with train-split statistics.
    pub fn load(&self) -> Result<Splits, HarnessError> {
        match &self.source {
            DataSource::Cifar10(dir) => cifar::load_cifar10(dir, self.sizes, self.seed),
            DataSource::Synthetic(spec) => {
                let mut s = gen_synthetic(spec, self.sizes, self.seed)?;
                s.normalize_by_train();
                Ok(s)
            }
        }
    }
}

/// Lowercase hex SHA-256 of `blob <len>\0<bytes>`, the git object scheme.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Short hash of the canonical config text; names the results directory.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex(&Sha256::digest(cfg.to_text().as_bytes()))[..16].to_string()
}

pub fn resolve_architecture(cfg: &ExperimentConfig) -> Result<NetworkSpec, HarnessError> {
    match &cfg.architecture {
        Architecture::Named(n) => NetworkSpec::by_name(n)
            .ok_or_else(|| HarnessError::Config { line: 0, msg: format!("unknown architecture {n:?}") }),
        Architecture::SpecFile(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
            Ok(NetworkSpec::parse(&text)?)
        }
    }
}

/// The trained starting point of one repetition.
#[derive(Debug, Clone)]
pub struct BaseRun {
    pub net: Network,
    pub report: TrainReport,
    pub test_accuracy: f64,
}

fn rep_seed(cfg: &ExperimentConfig, rep: usize) -> u64 {
    seeding::derive(cfg.seed, 1 + rep as u64)
}

/// Builds, widens if requested, and trains the base network of one
/// repetition.
pub fn train_base(cfg: &ExperimentConfig, splits: &Splits, rep: usize) -> Result<BaseRun, HarnessError> {
    let seed = rep_seed(cfg, rep);
    let spec = resolve_architecture(cfg)?;
    let mut net = Network::build(spec, seeding::derive(seed, 0))?;
    if let Some((layer, factor)) = cfg.widen {
        net = widen_layer(&net, layer, factor, seeding::derive(seed, 1))?;
    }
    let plateau = PlateauConfig {
        sgd: SgdConfig {
            learning_rate: cfg.train_lr,
            momentum: cfg.momentum,
            batch_size: cfg.batch_size,
        },
        patience: cfg.patience,
        max_epochs: cfg.max_epochs,
    };
    let (net, report) = train_to_plateau(&net, &splits.train, &splits.score, &plateau, seeding::derive(seed, 2))?;
    let test_accuracy = accuracy(&net, &splits.test)?;
    Ok(BaseRun {
        net,
        report,
        test_accuracy,
    })
}

/// Pruning pool size used for `frac_pruned`.
pub fn target_filters(cfg: &ExperimentConfig, base: &Network) -> usize {
    match cfg.target {
        Target::Count(n) => n,
        Target::All => base.census().iter().sum(),
        Target::Added => {
            let (layer, factor) = cfg.widen.expect("validated by the config parser");
            base.census()[layer] / factor * (factor - 1)
        }
    }
}

pub fn schedule(cfg: &ExperimentConfig, target: usize) -> PruneSchedule {
    PruneSchedule {
        filters_per_step: cfg.filters_per_step,
        finetune_updates: cfg.finetune_updates,
        stop: cfg.stop,
        target_filters: target,
        repetitions: cfg.repetitions,
        sgd: SgdConfig {
            learning_rate: cfg.finetune_lr,
            momentum: cfg.momentum,
            batch_size: cfg.batch_size,
        },
        score_batches: cfg.score_batches,
    }
}

/// Runs every strategy from each repetition's base network. All strategies
/// of a repetition share its fine-tuning seed, so trajectories are paired.
pub fn run_strategies(
    cfg: &ExperimentConfig,
    splits: &Splits,
    bases: &[Network],
) -> Result<Vec<(Strategy, Vec<ExperimentRecord>)>, HarnessError> {
    let target = target_filters(cfg, &bases[0]);
    let sched = schedule(cfg, target);
    let runs: Vec<Vec<Vec<StepRecord>>> = bases
        .par_iter()
        .enumerate()
        .map(|(rep, base)| {
            let seed = seeding::derive(rep_seed(cfg, rep), 3);
            cfg.strategies
                .iter()
                .map(|&s| prune_finetune_loop(base, s, &sched, splits, seed))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(cfg
        .strategies
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let per_rep: Vec<Vec<StepRecord>> = runs.iter().map(|r| r[i].clone()).collect();
            (s, aggregate(&per_rep, target))
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub config_hash: String,
    pub bases: Vec<BaseRun>,
    pub results: Vec<(Strategy, Vec<ExperimentRecord>)>,
}

pub fn csv_comments(cfg: &ExperimentConfig, strategy: Strategy) -> Vec<String> {
    vec![
        format!("strategy={strategy}"),
        format!(
            "schedule: filters_per_step={} finetune_updates={} batch_size={} finetune_lr={:?} momentum={:?} stop={:?} target={:?} repetitions={}",
            cfg.filters_per_step,
            cfg.finetune_updates,
            cfg.batch_size,
            cfg.finetune_lr,
            cfg.momentum,
            cfg.stop,
            cfg.target,
            cfg.repetitions
        ),
    ]
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    fs::write(path, text).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// Writes `<strategy>.csv` files and returns their names.
pub fn write_csvs(
    dir: &Path,
    cfg: &ExperimentConfig,
    results: &[(Strategy, Vec<ExperimentRecord>)],
) -> Result<Vec<String>, HarnessError> {
    let mut names = Vec::new();
    for (s, records) in results {
        let name = format!("{}.csv", s.slug());
        write(&dir.join(&name), &records_csv(records, &csv_comments(cfg, *s)))?;
        names.push(name);
    }
    Ok(names)
}

/// Runs a full experiment into `<out_root>/exp-<config hash>/`.
pub fn run_experiment(cfg: &ExperimentConfig, out_root: &Path) -> Result<ExperimentOutcome, HarnessError> {
    if cfg.repetitions == 0 {
        return Err(HarnessError::Config { line: 0, msg: "repetitions must be at least 1".into() });
    }
    let splits = DatasetSpec::from_config(cfg)?.load()?;
    let smallest = splits.train.len().min(splits.score.len()).min(splits.test.len());
    if smallest < cfg.batch_size {
        return Err(HarnessError::Dataset(format!(
            "every split needs at least batch_size = {} examples",
            cfg.batch_size
        )));
    }
    let bases = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| train_base(cfg, &splits, rep))
        .collect::<Result<Vec<_>, _>>()?;
    let nets: Vec<Network> = bases.iter().map(|b| b.net.clone()).collect();
    let results = run_strategies(cfg, &splits, &nets)?;

    let hash = config_hash(cfg);
    let dir = out_root.join(format!("exp-{hash}"));
    fs::create_dir_all(&dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
    let csvs = write_csvs(&dir, cfg, &results)?;

    let mut manifest = format!(
        "# prunelab experiment manifest\n# version = {} {}\n# config_hash = {hash}\n",
        env!("CARGO_PKG_NAME"),
        env!("CARGO_PKG_VERSION")
    );
    for (rep, b) in bases.iter().enumerate() {
        let bytes = save_weights(&b.net);
        let name = format!("base-rep{rep}.plab");
        fs::write(dir.join(&name), &bytes).map_err(|e| HarnessError::Io(format!("{name}: {e}")))?;
        manifest.push_str(&format!(
            "# base.rep{rep} = {name} sha256-blob:{} epochs={} score_accuracy={:?} test_accuracy={:?}\n",
            git_blob_hash(&bytes),
            b.report.epochs,
            b.report.score_accuracy,
            b.test_accuracy
        ));
    }
    for name in &csvs {
        manifest.push_str(&format!("# output = {name}\n"));
    }
    manifest.push_str(&cfg.to_text());
    write(&dir.join(MANIFEST), &manifest)?;
    Ok(ExperimentOutcome {
        dir,
        config_hash: hash,
        bases,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn git_hash_of_empty_blob() {
        // `git hash-object --object-format=sha256 /dev/null`
        assert_eq!(
            git_blob_hash(b""),
            "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
    }

    #[test]
    fn missing_cifar_dir_is_an_error() {
        let cfg = ExperimentConfig {
            dataset: DataKind::Cifar10,
            data_dir: Some("/nonexistent/cifar".into()),
            ..Default::default()
        };
        assert!(matches!(DatasetSpec::from_config(&cfg), Err(HarnessError::MissingData(_))));
    }

    #[test]
    fn added_target_counts_new_filters() {
        let cfg = ExperimentConfig {
            widen: Some((2, 4)),
            target: Target::Added,
            ..Default::default()
        };
        let net = widen_layer(&Network::build(NetworkSpec::mini_cnn_a(), 0).unwrap(), 2, 4, 0).unwrap();
        assert_eq!(target_filters(&cfg, &net), 192);
        let all = ExperimentConfig::default();
        assert_eq!(target_filters(&all, &Network::build(NetworkSpec::mini_cnn_a(), 0).unwrap()), 144);
    }
}
