mod commands;
mod config;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::OUTPUT_ROOT_ENV;

#[derive(Debug, Parser)]
#[command(name = "advmil", version, about = "Adversarial MIL survival estimation over feature bags")]
struct Cli {
    /// Prefix for relative output directories.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort: bags, manifest and truth sidecar.
    Synth(SynthArgs),
    /// Pack one slide's patch features into a bag file.
    Build(BuildArgs),
    /// Train on one cross-validation fold.
    Train(TrainArgs),
    /// Train with a fraction of the training labels masked out.
    TrainSemi(SemiArgs),
    /// Evaluate a checkpoint on a held-out split.
    Eval(EvalArgs),
    /// Region-occlusion sweep of a checkpoint.
    Occlude(OccludeArgs),
    /// Render SVG plots from an evaluation report.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML file with generator settings; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    n_patients: Option<usize>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    patches_per_region: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    censor_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// CSV with columns row, col, then one column per feature.
    #[arg(long)]
    patches: PathBuf,
    /// Output bag; the file stem becomes the patient id.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = advmil::patching::DEFAULT_ETA)]
    eta: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Encoder {
    Attention,
    Cluster,
    Sequence,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory (relative paths go under the output root).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    lambda_sl: Option<f64>,
    #[arg(long, value_enum)]
    encoder: Option<Encoder>,
    /// Two-digit noise code, e.g. 01.
    #[arg(long)]
    noise_code: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Args)]
struct SemiArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Fraction of training patients that keep their labels.
    #[arg(long)]
    labeled_ratio: f64,
    /// Number of folds the unlabeled pool is split into.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitName {
    Test,
    Validation,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Defaults to checkpoint.json in the run directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitName,
}

#[derive(Debug, Args)]
struct OccludeArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Comma-separated mask ratios in [0, 1).
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    occlusion: Option<PathBuf>,
    /// Defaults to the report's directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Most patients drawn in the strip plot.
    #[arg(long, default_value_t = 60)]
    max_patients: usize,
}

/// Failures split by exit code: bad invocations or configs (2) and runtime errors (1).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<advmil::Error> for CliError {
    fn from(e: advmil::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = cli.output_root.as_deref();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a, root),
        Command::Build(a) => commands::build(&a),
        Command::Train(a) => commands::train(&a, root),
        Command::TrainSemi(a) => commands::train_semi(&a, root),
        Command::Eval(a) => commands::eval(&a, root),
        Command::Occlude(a) => commands::occlude(&a, root),
        Command::Plot(a) => commands::plot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": msg }));
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            let chain: Vec<String> = e.chain().skip(1).map(ToString::to_string).collect();
            eprintln!(
                "{}",
                serde_json::json!({ "error": "runtime", "message": e.to_string(), "causes": chain })
            );
            ExitCode::from(1)
        }
    }
}
