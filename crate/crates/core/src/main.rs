use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use prunelab::harness::{self, ExperimentConfig};
use prunelab::netzoo::{load_weights, save_weights, NetworkSpec};
use prunelab::stat_model::{
    check_ordering, convergence_sweep, estimate_scenarios_k, sweep_csv, ContributionModel, DistributionSpec,
    ModelConfig,
};

#[derive(Parser)]
#[command(name = "prunelab", version, about = "Channel-pruning laboratory")]
struct Cli {
    /// Master seed; overrides the seed of a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for results.
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo estimates of the five pruning scenarios.
    Simulate(SimulateArgs),
    /// Train the base network described by a config file.
    Train(TrainArgs),
    /// Run the configured strategies from saved base weights.
    Prune(PruneArgs),
    /// Train, widen, prune and fine-tune as configured; writes CSVs and a manifest.
    Experiment(ConfigArg),
}

#[derive(Args)]
struct SimulateArgs {
    /// Filters in the first layer.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Filters in the second layer.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Contribution law of both layers, `family:location:scale`.
    #[arg(long, default_value = "uniform:0.5:1.5")]
    dist: DistributionSpec,
    /// First-layer threshold (default 0.9 * m * mean).
    #[arg(long)]
    a: Option<f64>,
    /// Second-layer threshold (default 0.8 * n * mean).
    #[arg(long)]
    b: Option<f64>,
    /// Fraction of second-layer filters in correlated pairs.
    #[arg(long, default_value_t = 0.0)]
    c2: f64,
    #[arg(long, default_value_t = 0.0)]
    corr_strength: f64,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Deviation threshold for the convergence sweep.
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Comma-separated layer sizes for the convergence sweep.
    #[arg(long, value_delimiter = ',')]
    sweep_n: Vec<usize>,
    /// Filters removed per scenario.
    #[arg(long, default_value_t = 1)]
    drop_k: usize,
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Repetition whose seed is used.
    #[arg(long, default_value_t = 0)]
    rep: usize,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    config: PathBuf,
    /// Weight file written by `train`.
    #[arg(long)]
    weights: PathBuf,
    /// Network spec text matching the weights.
    #[arg(long)]
    spec: PathBuf,
}

fn read_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn simulate(args: &SimulateArgs, seed: u64, out: &Path) -> Result<()> {
    let mut cfg = ModelConfig::with_defaults(args.m, args.n, args.dist, args.dist);
    cfg.corr_pair_fraction = args.c2;
    cfg.corr_strength = args.corr_strength;
    if let Some(a) = args.a {
        cfg.a = a;
    }
    if let Some(b) = args.b {
        cfg.b = b;
    }
    let model = ContributionModel::new(cfg.clone())?;
    let est = estimate_scenarios_k(&model, args.trials, seed, args.drop_k)?;
    write(&out.join("scenarios.csv"), est.to_csv())?;
    if args.drop_k == 1 {
        let report = check_ordering(&est, None);
        for p in report.scenario_pairs.iter().chain(&report.second_layer_chain) {
            println!(
                "{} <= {}: {} (margin {:.6}, slack {:.6})",
                p.lower,
                p.upper,
                if p.holds { "holds" } else { "VIOLATED" },
                p.margin,
                p.slack
            );
        }
    }
    if !args.sweep_n.is_empty() {
        let rows = convergence_sweep(&cfg, &args.sweep_n, args.epsilon, args.trials, seed)?;
        write(&out.join("sweep.csv"), sweep_csv(&rows))?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn train(args: &TrainArgs, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = read_config(&args.config, seed)?;
    let splits = harness::DatasetSpec::from_config(&cfg)?.load()?;
    let base = harness::train_base(&cfg, &splits, args.rep)?;
    write(&out.join("base.plab"), save_weights(&base.net))?;
    write(&out.join("base.spec"), base.net.spec().to_text())?;
    println!(
        "trained {} epochs (best {}), score accuracy {:.4}, test accuracy {:.4}",
        base.report.epochs, base.report.best_epoch, base.report.score_accuracy, base.test_accuracy
    );
    Ok(())
}

fn prune(args: &PruneArgs, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = read_config(&args.config, seed)?;
    let spec_text = fs::read_to_string(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    let spec = NetworkSpec::parse(&spec_text)?;
    let bytes = fs::read(&args.weights).with_context(|| format!("reading {}", args.weights.display()))?;
    let net = load_weights(spec, &bytes)?;
    let splits = harness::DatasetSpec::from_config(&cfg)?.load()?;
    let bases = vec![net; cfg.repetitions];
    let results = harness::run_strategies(&cfg, &splits, &bases)?;
    for name in harness::write_csvs(out, &cfg, &results)? {
        println!("wrote {}", out.join(name).display());
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match &cli.command {
        Command::Simulate(a) => simulate(a, cli.seed.unwrap_or(1), &cli.out_dir),
        Command::Train(a) => train(a, cli.seed, &cli.out_dir),
        Command::Prune(a) => prune(a, cli.seed, &cli.out_dir),
        Command::Experiment(a) => {
            let cfg = read_config(&a.config, cli.seed)?;
            let outcome = harness::run_experiment(&cfg, &cli.out_dir)?;
            for (s, records) in &outcome.results {
                if let Some(last) = records.last() {
                    println!(
                        "{s}: {} steps, final accuracy {:.4} +- {:.4}",
                        last.step, last.accuracy_mean, last.accuracy_std
                    );
                }
            }
            println!("wrote {}", outcome.dir.display());
            Ok(())
        }
    }
}
