//! Command-line front end: simulation, estimation, delay-factor tuning,
//! Monte Carlo benchmarking, and smoothed-report emission.
//!
//! Exit codes: 0 success, 2 configuration error, 3 schema/data error,
//! 4 estimation error.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;
use tvhte::Error;

#[derive(Parser, Debug)]
#[command(name = "tvhte")]
#[command(about = "Time-varying treatment effect estimation on panel data", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores); overrides the configured value.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory (created if absent).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scenario panel (CSV) and its ground truth (JSON).
    Simulate,
    /// Fit the configured estimator to a panel CSV.
    Fit,
    /// Grid-search the delay factor and emit the criterion curve.
    Tune,
    /// Monte Carlo benchmark across methods; emits the metrics table and
    /// the raw per-replicate store.
    Benchmark,
    /// Smooth a fitted effect table for plotting.
    Report,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Schema(_) | Error::Data(_) | Error::Io(_) | Error::Csv(_) => 3,
        Error::Estimation(_) => 4,
    }
}

fn hint_for(err: &Error) -> Option<&'static str> {
    let text = err.to_string();
    if text.contains("no untreated") || text.contains("no treated") {
        Some("every time point needs observed subjects in both treatment arms; check the validation counts or restrict the time range")
    } else if text.contains("below min cell") {
        Some("a time cell is thinner than min_cell; lower estimator.min_cell or set allow_thin_cells = true to proceed with warnings")
    } else if text.contains("below effect dimension") {
        Some("too few observed subjects at a time point; consider dropping sparse time points upstream")
    } else {
        None
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let config_path = match &cli.config {
        Some(p) => p.clone(),
        None => {
            eprintln!("error: --config PATH is required");
            return ExitCode::from(2);
        }
    };
    let config = match RunConfig::load(&config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e));
        }
    };

    let jobs = cli.jobs.unwrap_or(config.jobs);
    if jobs > 0 {
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let seed = cli.seed.unwrap_or(config.seed);

    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create output directory {}: {e}", cli.out.display());
        return ExitCode::from(3);
    }

    let result = match cli.command {
        Command::Simulate => commands::simulate(&config, seed, &cli.out),
        Command::Fit => commands::fit(&config, &cli.out),
        Command::Tune => commands::tune(&config, &cli.out),
        Command::Benchmark => commands::benchmark(&config, seed, &cli.out),
        Command::Report => commands::report(&config, &cli.out),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(hint) = hint_for(&e) {
                eprintln!("hint: {hint}");
            }
            ExitCode::from(exit_code_for(&e))
        }
    }
}
