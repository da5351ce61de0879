//! `sceneflow`: generate sandbox data, train, evaluate and run experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "sceneflow", version, about = "Self-supervised scene flow toolkit")]
pub struct Cli {
    /// TOML configuration file; flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Runs are single-threaded and reproducible; the flag is recorded with the run.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate sandbox datasets.
    Generate(GenerateArgs),
    /// Train a flow extractor.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run a loss ablation or the baseline comparison.
    Ablate(AblateArgs),
    /// Train on each mechanism and evaluate on both.
    Mechmatrix(MatrixArgs),
    /// Rebuild plots and print the results table of a finished run.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MechanismArg {
    Correspondence,
    Resampling,
    /// Both mechanisms from the same scene seeds, in sibling directories.
    Both,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Training plus validation pairs.
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    pub test_count: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long, value_enum)]
    pub mechanism: Option<MechanismArg>,
    /// sphere, box, cylinder or mixed.
    #[arg(long)]
    pub shape: Option<String>,
    #[arg(long)]
    pub max_rotation_deg: Option<f64>,
    #[arg(long)]
    pub max_translation: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// adversarial or chamfer_cycle.
    #[arg(long)]
    pub objective: Option<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use the final parameters instead of the best-validation ones.
    #[arg(long)]
    pub last: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AblationArg {
    Cycle,
    Multiscale,
    Baseline,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub kind: AblationArg,
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub val_data: Option<PathBuf>,
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct MatrixArgs {
    /// Directory with `train`, `val` and `test` correspondence datasets.
    #[arg(long)]
    pub correspondence: Option<PathBuf>,
    /// Directory with the matching resampling datasets.
    #[arg(long)]
    pub resampling: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Output directory of an earlier `train`, `ablate` or `mechmatrix` run.
    #[arg(long)]
    pub run: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.detail().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
