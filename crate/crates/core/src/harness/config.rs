//! Plain-text experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment; blank lines are
//! ignored. Unknown keys and malformed values are errors that name the line.
//!
//! ```text
//! architecture     = minicnn-a        # or minicnn-v, or spec:<path>
//! dataset          = synthetic        # or cifar10
//! data_dir         = /data/cifar-10-batches-bin   # cifar10 only; else $PRUNELAB_DATA
//! train_size       = 2000
//! score_size       = 500
//! test_size        = 500
//! separability     = 0.1              # synthetic only
//! widen_layer      = 2                # optional, zero-based conv index
//! widen_factor     = 4
//! strategies       = layer-random:2, global-taylor
//! filters_per_step = 2
//! finetune_updates = 50
//! batch_size       = 32
//! finetune_lr      = 0.01
//! train_lr         = 0.01
//! momentum         = 0.9
//! patience         = 5
//! max_epochs       = 60
//! stop_fraction    = 0.5              # or stop_steps = <n>
//! target           = added            # added | all | <filter count>
//! score_batches    = 0                # 0 = whole score split
//! repetitions      = 5
//! seed             = 1
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;

use super::HarnessError;
use crate::pruner::{StopRule, Strategy};

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Named(String),
    SpecFile(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Synthetic,
    Cifar10,
}

/// Denominator of the pruned fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Filters added by widening.
    Added,
    /// All conv filters of the base network.
    All,
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub architecture: Architecture,
    pub dataset: DataKind,
    pub data_dir: Option<PathBuf>,
    pub train_size: usize,
    pub score_size: usize,
    pub test_size: usize,
    pub separability: f64,
    pub widen: Option<(usize, usize)>,
    pub strategies: Vec<Strategy>,
    pub filters_per_step: usize,
    pub finetune_updates: usize,
    pub batch_size: usize,
    pub finetune_lr: f64,
    pub train_lr: f64,
    pub momentum: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub stop: StopRule,
    pub target: Target,
    pub score_batches: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Named("minicnn-a".into()),
            dataset: DataKind::Synthetic,
            data_dir: None,
            train_size: 2000,
            score_size: 500,
            test_size: 500,
            separability: 0.1,
            widen: None,
            strategies: vec![Strategy::GlobalTaylor],
            filters_per_step: 2,
            finetune_updates: 50,
            batch_size: 32,
            finetune_lr: 0.01,
            train_lr: 0.01,
            momentum: 0.9,
            patience: 5,
            max_epochs: 60,
            stop: StopRule::Fraction(0.5),
            target: Target::All,
            score_batches: 0,
            repetitions: 5,
            seed: 1,
        }
    }
}

fn num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, HarnessError> {
    v.parse().map_err(|_| HarnessError::Config {
        line,
        msg: format!("{key}: cannot parse {v:?}"),
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut c = Self::default();
        let mut widen_layer = None;
        let mut widen_factor = 4;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| HarnessError::Config {
                line,
                msg: format!("expected key = value, got {content:?}"),
            })?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "architecture" => {
                    c.architecture = match v.strip_prefix("spec:") {
                        Some(p) => Architecture::SpecFile(p.into()),
                        None => Architecture::Named(v.into()),
                    }
                }
                "dataset" => {
                    c.dataset = match v {
                        "synthetic" => DataKind::Synthetic,
                        "cifar10" => DataKind::Cifar10,
                        _ => {
                            return Err(HarnessError::Config {
                                line,
                                msg: format!("unknown dataset {v:?}"),
                            })
                        }
                    }
                }
                "data_dir" => c.data_dir = Some(v.into()),
                "train_size" => c.train_size = num(line, key, v)?,
                "score_size" => c.score_size = num(line, key, v)?,
                "test_size" => c.test_size = num(line, key, v)?,
                "separability" => c.separability = num(line, key, v)?,
                "widen_layer" => widen_layer = Some(num(line, key, v)?),
                "widen_factor" => widen_factor = num(line, key, v)?,
                "strategies" => {
                    c.strategies = v
                        .split(',')
                        .map(|s| {
                            s.trim().parse().map_err(|e: crate::pruner::PruneError| HarnessError::Config {
                                line,
                                msg: e.to_string(),
                            })
                        })
                        .collect::<Result<_, _>>()?
                }
                "filters_per_step" => c.filters_per_step = num(line, key, v)?,
                "finetune_updates" => c.finetune_updates = num(line, key, v)?,
                "batch_size" => c.batch_size = num(line, key, v)?,
                "finetune_lr" => c.finetune_lr = num(line, key, v)?,
                "train_lr" => c.train_lr = num(line, key, v)?,
                "momentum" => c.momentum = num(line, key, v)?,
                "patience" => c.patience = num(line, key, v)?,
                "max_epochs" => c.max_epochs = num(line, key, v)?,
                "stop_fraction" => c.stop = StopRule::Fraction(num(line, key, v)?),
                "stop_steps" => c.stop = StopRule::Steps(num(line, key, v)?),
                "target" => {
                    c.target = match v {
                        "added" => Target::Added,
                        "all" => Target::All,
                        _ => Target::Count(num(line, key, v)?),
                    }
                }
                "score_batches" => c.score_batches = num(line, key, v)?,
                "repetitions" => c.repetitions = num(line, key, v)?,
                "seed" => c.seed = num(line, key, v)?,
                _ => {
                    return Err(HarnessError::Config {
                        line,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        c.widen = widen_layer.map(|l| (l, widen_factor));
        if c.strategies.is_empty() {
            return Err(HarnessError::Config {
                line: 0,
                msg: "no strategies given".into(),
            });
        }
        if c.target == Target::Added && c.widen.is_none() {
            return Err(HarnessError::Config {
                line: 0,
                msg: "target = added needs widen_layer".into(),
            });
        }
        Ok(c)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv(
            "architecture",
            match &self.architecture {
                Architecture::Named(n) => n.clone(),
                Architecture::SpecFile(p) => format!("spec:{}", p.display()),
            },
        );
        kv(
            "dataset",
            match self.dataset {
                DataKind::Synthetic => "synthetic".into(),
                DataKind::Cifar10 => "cifar10".into(),
            },
        );
        if let Some(d) = &self.data_dir {
            kv("data_dir", d.display().to_string());
        }
        kv("train_size", self.train_size.to_string());
        kv("score_size", self.score_size.to_string());
        kv("test_size", self.test_size.to_string());
        kv("separability", format!("{:?}", self.separability));
        if let Some((l, f)) = self.widen {
            kv("widen_layer", l.to_string());
            kv("widen_factor", f.to_string());
        }
        kv(
            "strategies",
            self.strategies.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
        );
        kv("filters_per_step", self.filters_per_step.to_string());
        kv("finetune_updates", self.finetune_updates.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("finetune_lr", format!("{:?}", self.finetune_lr));
        kv("train_lr", format!("{:?}", self.train_lr));
        kv("momentum", format!("{:?}", self.momentum));
        kv("patience", self.patience.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        match self.stop {
            StopRule::Fraction(f) => kv("stop_fraction", format!("{f:?}")),
            StopRule::Steps(n) => kv("stop_steps", n.to_string()),
        }
        kv(
            "target",
            match self.target {
                Target::Added => "added".into(),
                Target::All => "all".into(),
                Target::Count(n) => n.to_string(),
            },
        );
        kv("score_batches", self.score_batches.to_string());
        kv("repetitions", self.repetitions.to_string());
        kv("seed", self.seed.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruner::LayerRule;

    #[test]
    fn parses_experiment_one() {
        let text = "# widened run\narchitecture = minicnn-a\nwiden_layer = 2\nwiden_factor = 4\n\
                    strategies = layer-random:2, global-taylor  # both\ntarget = added\nrepetitions = 5\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.widen, Some((2, 4)));
        assert_eq!(
            c.strategies,
            vec![Strategy::LayerRandom(LayerRule::Fixed(2)), Strategy::GlobalTaylor]
        );
        assert_eq!(c.target, Target::Added);
    }

    #[test]
    fn text_roundtrip() {
        let c = ExperimentConfig {
            widen: Some((1, 3)),
            stop: StopRule::Steps(7),
            target: Target::Count(40),
            data_dir: Some("/tmp/x".into()),
            separability: 0.123456789,
            ..Default::default()
        };
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line() {
        let err = ExperimentConfig::parse("seed = 1\n\nbatch_size = many\n").unwrap_err();
        assert!(matches!(err, HarnessError::Config { line: 3, .. }), "{err}");
        let err = ExperimentConfig::parse("colour = red\n").unwrap_err();
        assert!(matches!(err, HarnessError::Config { line: 1, .. }));
        let err = ExperimentConfig::parse("strategies = magic\n").unwrap_err();
        assert!(matches!(err, HarnessError::Config { line: 1, .. }));
        assert!(ExperimentConfig::parse("target = added\n").is_err());
        assert!(ExperimentConfig::parse("no equals sign\n").is_err());
    }
}
