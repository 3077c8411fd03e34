//! `ergo-hri`: dataset generation, training, estimation and simulation from
//! the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 non-convergence.
//! `ERGO_HRI_CONFIG_DIR` names a directory searched for `human.toml`,
//! `demo_task.toml`, `estimator.toml` and `sim.toml` when the matching flag
//! is absent.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use manifest::RunManifest;

pub const CONFIG_DIR_ENV: &str = "ERGO_HRI_CONFIG_DIR";

#[derive(Debug, Parser)]
#[command(name = "ergo-hri", version, about = "Ergonomics-aware posture estimation and correction")]
pub struct Cli {
    /// Human model TOML (segment lengths, joint limits).
    #[arg(long, global = true)]
    pub human: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled posture dataset.
    GenDataset(GenDatasetArgs),
    /// Train the learned risk score; prints the held-out report.
    Train(TrainArgs),
    /// Evaluate a trained model, or k-fold cross-validate a configuration.
    Eval(EvalArgs),
    /// Simulate an uncorrected task and write noisy observations plus truth.
    Observe(ObserveArgs),
    /// Estimate postures from an observation file.
    Estimate(EstimateArgs),
    /// Run one teleoperation episode.
    Simulate(SimulateArgs),
    /// Run the alpha x solver grid on one task.
    Compare(CompareArgs),
    /// Repeat a command from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CtxKind {
    /// Seated, feet supported, slight neck flexion.
    Neutral,
    /// Every context field drawn at random.
    Varied,
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub n: Option<usize>,
    /// Keep the label distribution as drawn instead of equalizing classes.
    #[arg(long)]
    pub no_balance: bool,
    #[arg(long, value_enum)]
    pub ctx: Option<CtxKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; `.csv` selects the text format.
    #[arg(long)]
    pub out: PathBuf,
    /// 200k balanced records in the neutral context.
    #[arg(long)]
    pub desk: bool,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// 200 epochs, learning rate 3e-3, batches of 256, cosine decay.
    #[arg(long)]
    pub desk: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model output file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model to score on the whole dataset. Without it, runs k-fold
    /// cross-validation with the training flags.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report output file (also printed).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct ObserveArgs {
    /// Task TOML; defaults to the demo task.
    #[arg(long)]
    pub task: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Observe the exact leader motion.
    #[arg(long)]
    pub noise_free: bool,
    /// Writes observations.csv, truth.csv and episode.csv here.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Pf,
    OnlineIk,
    OfflineTrajIk,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub observations: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Pf)]
    pub method: Method,
    /// Estimator TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground-truth trajectory in the estimate format; adds a deviation table.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub particles: Option<usize>,
    /// Trajectory output; metrics go to `<out>.metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Correction {
    None,
    Cem,
    Gradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveKind {
    /// Learned score; needs `--model`.
    Dula,
    /// Worksheet score.
    Rula,
}

#[derive(Debug, Args)]
pub struct SimFlags {
    /// Task TOML; defaults to the demo task.
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Simulator TOML.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trained model for the learned objective.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Defaults: learned score for gradient, worksheet score for CEM.
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveKind>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub cem_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = Correction::None)]
    pub correction: Correction,
    /// Episode CSV output.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Episode CSVs and summary.csv go here.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.75])]
    pub alphas: Vec<f64>,
    #[command(flatten)]
    pub sim: SimFlags,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

/// Failure classes, one per exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::NotConverged(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::NotConverged(m) => write!(f, "did not converge: {m}"),
        }
    }
}

impl From<ergo_hri::Error> for CliError {
    fn from(e: ergo_hri::Error) -> Self {
        use ergo_hri::Error as E;
        match e {
            E::InvalidArgument(_) => Self::Usage(e.to_string()),
            E::Diverged { .. } | E::Infeasible { .. } | E::RolloutDiverged { .. } => Self::NotConverged(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match commands::run(cli, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ergo-hri: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
