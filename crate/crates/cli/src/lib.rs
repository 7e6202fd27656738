//! Batch driver: reads a JSON config, runs one subcommand and writes CSV,
//! key=value summaries and SVG plots into an output directory.
//!
//! Exit codes: 0 success, 2 configuration or I/O error, 3 horizon too long
//! for the value coefficients, 4 verification failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mfpa_core::Error;

pub mod commands;
pub mod config;
pub mod output;
pub mod svg;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                Error::HorizonTooLong { .. } => 3,
                Error::InvalidParameters(_) | Error::InvalidConfig(_) | Error::EmptyGrid => 2,
                Error::NonFiniteValue(_) | Error::NonFiniteState { .. } | Error::PicardNoConvergence { .. } => 4,
            },
            CliError::Verification(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mfpa",
    version,
    about = "Mean-field principal-agent contracts with accident jumps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides sim.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides sim.n_paths.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Overrides sim.workers.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Value coefficients, optimal contract and moment curves.
    Solve(CommonArgs),
    /// Monte Carlo ensemble compared against the moment curves.
    Simulate(CommonArgs),
    /// Incentive-compatibility and martingale checks.
    VerifyIc {
        #[command(flatten)]
        common: CommonArgs,
        /// Contract table (t,z,u_minus1[,alpha0,alpha1]) replacing the optimal one.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// One row per value of a market parameter.
    Sweep(CommonArgs),
    #[command(hide = true)]
    SimulateGeneric(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Solve(c) | Command::Simulate(c) | Command::Sweep(c) | Command::SimulateGeneric(c) => c,
            Command::VerifyIc { common, .. } => common,
        }
    }
}

/// Loads the config and applies flag overrides.
pub fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.sim.seed = Some(s);
    }
    if let Some(n) = args.paths {
        cfg.sim.n_paths = Some(n);
    }
    if let Some(w) = args.workers {
        cfg.sim.workers = Some(w);
    }
    Ok(cfg)
}

/// Runs a parsed command; `Ok` carries the human-readable outcome.
pub fn execute(cmd: &Command) -> Result<String, CliError> {
    let args = cmd.common();
    let cfg = load_config(args)?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    match cmd {
        Command::Solve(_) => commands::solve(&cfg, &args.out),
        Command::Simulate(_) => commands::simulate(&cfg, &args.out),
        Command::VerifyIc { policy, .. } => commands::verify_ic(&cfg, &args.out, policy.as_deref()),
        Command::Sweep(_) => commands::sweep(&cfg, &args.out),
        Command::SimulateGeneric(_) => commands::simulate_generic(&cfg, &args.out),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
