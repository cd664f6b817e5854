//! `regime-scope`: train instrumented runs, probe activation-pattern
//! geometry, render run figures and sweep hyperparameter grids.
//!
//! Failures print a JSON object `{"error", "message", "exit_code"}` on
//! stderr. Exit codes: 2 bad config, 3 dataset/checkpoint/artifact error,
//! 4 divergence, 1 anything else.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regime_scope::Error;

#[derive(Parser)]
#[command(name = "regime-scope", version, about = "Activation-pattern instrumentation for ReLU network training")]
struct Cli {
    /// Log progress to stderr (RUST_LOG overrides).
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts.
    Train(TrainArgs),
    /// Measure activation-pattern flip radii around anchors of a checkpoint.
    Probe(ProbeArgs),
    /// Render a run directory as an SVG figure or the matching CSV.
    Report(ReportArgs),
    /// Train several configurations, possibly in parallel.
    Sweep(SweepArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Artifact directory [default: runs/<config stem>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip Δw/Δa capture.
    #[arg(long)]
    pub no_metrics: bool,
}

#[derive(Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub anchors: usize,
    #[arg(long, default_value_t = 16)]
    pub directions: usize,
    /// Probe input space only.
    #[arg(long, conflicts_with = "param")]
    pub input: bool,
    /// Probe parameter space only.
    #[arg(long)]
    pub param: bool,
    /// Take anchors from this config's validation split instead of drawing
    /// standard-normal inputs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    pub resolution: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory [default: <checkpoint dir>/probe].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write each anchor's K.csv and c.csv.
    #[arg(long)]
    pub export_affine: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Svg,
    Csv,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value = "svg")]
    pub format: Format,
    /// Output file [default: <run>/figure.<format>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "")]
    pub title: String,
}

#[derive(Args)]
pub struct SweepArgs {
    /// Config files to run, in order.
    #[arg(long, num_args = 1.., required_unless_present = "grid")]
    pub configs: Vec<PathBuf>,
    /// Expand one base config into the 12-run MLP grid
    /// ({sgd, adam} × lr {1e-2, 1e-3, 1e-4} × weight decay {1e-3, 1e-4}).
    #[arg(long, value_name = "BASE_CONFIG", conflicts_with = "configs")]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value = "runs/sweep")]
    pub out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidOptimizer(_) => 2,
        Error::Dataset(_) | Error::Checkpoint(_) | Error::NotPiecewiseLinear { .. } | Error::Io { .. } | Error::Serde(_) => 3,
        Error::Divergence(_) | Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Probe(a) => commands::probe(&a),
        Command::Report(a) => commands::report(&a),
        Command::Sweep(a) => commands::sweep(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let body = serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
