//! `range-rte`: estimate, simulate, analyse and drift-track the relative
//! transform between two ranging robots.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use range_rte::estimators::EstimatorKind;
use range_rte::io::RunConfig;

#[derive(Parser)]
#[command(name = "range-rte", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the transform from recorded odometry and range logs.
    Estimate(Common),
    /// Run Monte-Carlo trials and write per-trial results and a summary.
    Simulate(Common),
    /// Fisher information, CRLB and determinant analysis.
    Fim(Common),
    /// Sliding-window drift correction scenario.
    Drift(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured estimator(s).
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Config = 2,
    Data = 3,
    Solver = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }
}

/// Exit code for a library error.
pub fn exit_for(e: &range_rte::Error) -> Exit {
    use range_rte::Error as E;
    match e {
        E::InvalidInput(_) | E::Parse(_) | E::Csv(_) | E::Json(_) | E::Io(_) | E::TooManySamples { .. } => Exit::Config,
        E::NoData(_) | E::InsufficientData { .. } | E::SingularGeometry | E::OutOfRange { .. } => Exit::Data,
        E::DegenerateSolution(_)
        | E::HeadingUndefined(_)
        | E::Sdp { .. }
        | E::LeastSquares(_)
        | E::AllRestartsFailed(_) => Exit::Solver,
    }
}

impl From<range_rte::Error> for Failure {
    fn from(e: range_rte::Error) -> Self {
        Self::new(exit_for(&e), e.to_string())
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("RANGE_RTE_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::new(
            Exit::Config,
            format!("RANGE_RTE_THREADS must be a positive integer, got '{v}'"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::new(Exit::Config, e.to_string()))
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), Failure> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(e) = common.estimator {
        cfg.estimator = e;
        cfg.estimators = None;
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<Exit, Failure> {
    configure_threads()?;
    match cli.command {
        Command::Estimate(c) => {
            let (cfg, out) = load(&c)?;
            commands::estimate(&cfg, &out)
        }
        Command::Simulate(c) => {
            let (cfg, out) = load(&c)?;
            commands::simulate(&cfg, &out)
        }
        Command::Fim(c) => {
            let (cfg, out) = load(&c)?;
            commands::fim(&cfg, &out)
        }
        Command::Drift(c) => {
            let (cfg, out) = load(&c)?;
            commands::drift(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.exit as u8)
        }
    }
}
