mod check;
mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{RawConfig, RunConfig};
use crate::error::CliError;

/// Closed NPZ plankton model with maturity-structured zooplankton.
#[derive(Parser, Debug)]
#[command(name = "tde-plankton", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (`key = value` lines, or a metadata.json from an earlier run).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Named preset applied before the configuration file.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Override one key; repeatable, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Dominant equilibrium over a total-biomass grid, one CSV per maturity.
    Equilibria,
    /// Trace stability boundaries in the (maturity, total biomass) plane.
    TraceBoundary,
    /// Integrate the threshold-delay system from an initial history.
    Simulate,
    /// Run the invariant suite and print a JSON-lines report.
    Check,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut raw = RawConfig::default();
    if let Some(name) = &cli.preset {
        raw.apply_preset(name)?;
    }
    if let Some(path) = &cli.config {
        raw.apply_file(path)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        raw.set(k, v)?;
    }
    RunConfig::from_raw(raw)
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("TDE_PLANKTON_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("TDE_PLANKTON_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    init_threads()?;
    let cfg = load(cli)?;
    match cli.command {
        Command::Equilibria => commands::equilibria(&cfg, &cli.out),
        Command::TraceBoundary => commands::trace_boundary(&cfg, &cli.out),
        Command::Simulate => commands::simulate(&cfg, &cli.out),
        Command::Check => check::check(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
