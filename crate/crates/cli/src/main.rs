//! `pcsem`: generate toy datasets, train joint or baseline models, evaluate
//! them and sweep the reconstruction weight.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime or data errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use pcsem_core::data::{make_dataset, read_dataset, write_dataset, DatasetConfig, Split};
use pcsem_core::experiment::{
    evaluate_split, load_predictor, run_ablation, run_training, write_eval_report,
    ExperimentConfig, Mode, Predictor, DEFAULT_ALPHA_GRID,
};

/// Bad flags, bad config values or missing required settings.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

#[derive(Parser)]
#[command(
    name = "pcsem",
    version,
    about = "Joint point-cloud reconstruction and part segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled toy dataset.
    Gen(GenArgs),
    /// Train a joint model or the two-stage baseline.
    Train(TrainArgs),
    /// Evaluate a trained run on a dataset split.
    Eval(EvalArgs),
    /// Sweep alpha for the joint model and tabulate test metrics.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenArgs {
    /// TOML file with any of the generation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of shapes, spread round-robin over categories [default: 100]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    count: Option<u64>,
    /// Points per shape [default: 256]
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n_points: Option<u64>,
    /// Share of shapes in the train split [default: 0.8]
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Share of shapes in the validation split [default: 0.1]
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Noise added to the generator parameters in each feature [default: 0]
    #[arg(long)]
    feature_noise: Option<f64>,
    /// Dataset seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the manifest and cloud files
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Everything `gen` needs; also the schema of its config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenConfig {
    count: usize,
    n_points: usize,
    train_fraction: f64,
    val_fraction: f64,
    feature_noise: f64,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for GenConfig {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            count: d.count,
            n_points: d.n_points,
            train_fraction: d.train_fraction,
            val_fraction: d.val_fraction,
            feature_noise: d.feature_noise,
            seed: 0,
            out: None,
        }
    }
}

/// Training settings shared by `train` and `ablate`. Unset flags fall back to
/// the config file, then to built-in defaults.
#[derive(Args)]
struct TrainFlags {
    /// TOML file with any experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for the config echo, log and checkpoints
    #[arg(long)]
    out: Option<PathBuf>,
    /// Chamfer weight [default: 1e4]
    #[arg(long)]
    alpha: Option<f64>,
    /// Segmentation loss weight [default: 1]
    #[arg(long)]
    beta: Option<f64>,
    /// Predicted points per shape [default: 256]
    #[arg(long)]
    n_points: Option<usize>,
    /// Initialization and shuffling seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Joint decoder and segmentation network rate [default: 5e-4]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Baseline reconstruction decoder rate [default: 5e-5]
    #[arg(long)]
    rec_learning_rate: Option<f64>,
    /// Multiplier applied to both learning rates [default: 20]
    #[arg(long)]
    lr_scale: Option<f64>,
    /// Joint training epochs before scaling [default: 500]
    #[arg(long)]
    joint_epochs: Option<usize>,
    /// Epochs for each baseline stage before scaling [default: 1000]
    #[arg(long)]
    baseline_epochs: Option<usize>,
    /// Multiplier applied to both epoch counts [default: 0.2]
    #[arg(long)]
    epoch_scale: Option<f64>,
    /// Shapes per gradient step [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// `joint` or `baseline` [default: joint]
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long, required_unless_present = "ground_truth")]
    run: Option<PathBuf>,
    /// Dataset directory; defaults to the one recorded by the run.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Score the ground truth against itself instead of a trained model.
    #[arg(long, conflicts_with = "run")]
    ground_truth: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Comma-separated alpha values.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Comma-separated seeds; metrics are averaged over them.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    seeds: Vec<u64>,
}

const GEN_CONFIG_FILE: &str = "gen.toml";
const ABLATION_TABLE: &str = "ablation.txt";
const ABLATION_TSV: &str = "ablation.tsv";
const ABLATION_JSON: &str = "ablation.json";

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))
}

fn gen_config(args: &GenArgs) -> Result<GenConfig> {
    let mut c = match &args.config {
        Some(path) => match toml::from_str(&read_config_text(path)?) {
            Ok(c) => c,
            Err(e) => return usage(format!("config {}: {e}", path.display())),
        },
        None => GenConfig::default(),
    };
    if let Some(v) = args.count {
        c.count = v as usize;
    }
    if let Some(v) = args.n_points {
        c.n_points = v as usize;
    }
    if let Some(v) = args.train_fraction {
        c.train_fraction = v;
    }
    if let Some(v) = args.val_fraction {
        c.val_fraction = v;
    }
    if let Some(v) = args.feature_noise {
        c.feature_noise = v;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if args.out.is_some() {
        c.out = args.out.clone();
    }
    if c.count == 0 || c.n_points == 0 {
        return usage("count and n_points must be positive");
    }
    if !(c.feature_noise >= 0.0 && c.feature_noise.is_finite()) {
        return usage("feature_noise must be a finite nonnegative number");
    }
    Ok(c)
}

fn experiment_config(flags: &TrainFlags, mode: Option<Mode>) -> Result<ExperimentConfig> {
    let mut c = match &flags.config {
        Some(path) => match ExperimentConfig::from_toml(&read_config_text(path)?) {
            Ok(c) => c,
            Err(e) => return usage(format!("{}: {e}", path.display())),
        },
        None => ExperimentConfig::default(),
    };
    macro_rules! overlay {
        ($($field:ident),*) => {
            $(if let Some(v) = flags.$field.clone() {
                c.$field = v;
            })*
        };
    }
    overlay!(
        alpha,
        beta,
        n_points,
        seed,
        learning_rate,
        rec_learning_rate,
        lr_scale,
        joint_epochs,
        baseline_epochs,
        epoch_scale,
        batch_size
    );
    if flags.data.is_some() {
        c.data = flags.data.clone();
    }
    if flags.out.is_some() {
        c.out = flags.out.clone();
    }
    if let Some(m) = mode {
        c.mode = m;
    }
    if let Err(e) = c.validate() {
        return usage(e.to_string());
    }
    Ok(c)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match value {
        Some(p) => Ok(p),
        None => usage(format!(
            "--{flag} is required (or set `{flag}` in the config file)"
        )),
    }
}

fn load_data(dir: &Path) -> Result<pcsem_core::data::Dataset> {
    read_dataset(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let c = gen_config(&args)?;
    let out = required(&c.out, "out")?.to_path_buf();
    let dataset_config = DatasetConfig {
        count: c.count,
        n_points: c.n_points,
        train_fraction: c.train_fraction,
        val_fraction: c.val_fraction,
        feature_noise: c.feature_noise,
    };
    if let Err(e) = dataset_config.split_sizes() {
        return usage(e.to_string());
    }
    let dataset = make_dataset(&dataset_config, c.seed)?;
    let digest = write_dataset(&out, &dataset)?;
    let echo = out.join(GEN_CONFIG_FILE);
    std::fs::write(&echo, toml::to_string(&c)?)
        .with_context(|| format!("writing {}", echo.display()))?;
    println!(
        "wrote {} shapes to {}",
        dataset.samples.len(),
        out.display()
    );
    println!("content_digest {}", dataset.digest());
    println!("manifest_sha256 {digest}");
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = experiment_config(&args.flags, args.mode)?;
    let data = required(&config.data, "data")?;
    let out = required(&config.out, "out")?;
    let dataset = load_data(data)?;
    run_training(&config, &dataset, out)?;
    println!(
        "trained {} model for {} epochs into {}",
        config.mode.name(),
        config.epochs(config.mode),
        out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (predictor, data, mode, default_out) = if args.ground_truth {
        let data = required(&args.data, "data")?.to_path_buf();
        (Predictor::GroundTruth, data, "ground-truth", None)
    } else {
        let run = args.run.as_deref().expect("clap enforces --run");
        let (config, predictor) = load_predictor(run)?;
        let data = match (&args.data, &config.data) {
            (Some(d), _) | (None, Some(d)) => d.clone(),
            (None, None) => return usage("--data is required: the run does not record a dataset"),
        };
        (predictor, data, config.mode.name(), Some(run.to_path_buf()))
    };
    let out = match (args.out, default_out) {
        (Some(o), _) | (None, Some(o)) => o,
        (None, None) => return usage("--out is required with --ground-truth"),
    };
    let dataset = load_data(&data)?;
    let report = evaluate_split(&predictor, &dataset, args.split, mode)?;
    write_eval_report(&report, &out)?;
    print!("mode {mode}\n{}", report.summary.to_table());
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let config = experiment_config(&args.flags, Some(Mode::Joint))?;
    let data = required(&config.data, "data")?;
    let out = required(&config.out, "out")?;
    let alphas = args.alphas.unwrap_or_else(|| DEFAULT_ALPHA_GRID.to_vec());
    if alphas.is_empty() || args.seeds.is_empty() {
        return usage("--alphas and --seeds must be nonempty");
    }
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return usage(format!("alpha must be finite and nonnegative, got {a}"));
    }
    let dataset = load_data(data)?;
    let report = run_ablation(
        &config,
        &dataset,
        &alphas,
        &args.seeds,
        &mut |alpha, seed, r| {
            eprintln!(
                "alpha {alpha:e} seed {seed}: chamfer {:.4} miou {:.2}",
                r.summary.mean.chamfer * 100.0,
                r.summary.mean.miou * 100.0
            );
        },
    )?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let table = report.to_table();
    for (name, body) in [
        (ABLATION_TABLE, table.clone()),
        (ABLATION_TSV, report.to_tsv()),
        (ABLATION_JSON, report.to_json()),
    ] {
        let path = out.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
