//! Command-line entry point of `stable-bench`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stable_bilevel::Error;

use crate::config::ExperimentConfig;
use crate::experiment::run_experiment_in;
use crate::slope::{fit_rate_slope, read_column};
use crate::verify::verify_config;

#[derive(Debug, Parser)]
#[command(
    name = "stable-bench",
    version,
    about = "Run and analyze stochastic bilevel experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every seed of an experiment and write CSVs.
    Run {
        config: PathBuf,
        /// Overrides `run.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check hypergradients against finite differences and the projections.
    Verify { config: PathBuf },
    /// Fit the log-log slope of a CSV column.
    Slope {
        csv: PathBuf,
        #[arg(long)]
        column: String,
        /// Iteration range `lo:hi`.
        #[arg(long, value_parser = parse_range)]
        range: (f64, f64),
    },
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    let lo: f64 = lo
        .trim()
        .parse()
        .map_err(|e| format!("bad lower bound: {e}"))?;
    let hi: f64 = hi
        .trim()
        .parse()
        .map_err(|e| format!("bad upper bound: {e}"))?;
    if !(lo < hi) {
        return Err(format!("empty range {lo}:{hi}"));
    }
    Ok((lo, hi))
}

/// Exit code 2 for usage and configuration problems, 1 for runtime failures.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Configuration(_) => 2,
        _ => 1,
    }
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(&e))
}

pub fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail_load(&config, e),
            };
            let dir = out.unwrap_or_else(|| cfg.output_dir());
            match run_experiment_in(&cfg, &dir) {
                Ok(outcome) => {
                    let failed: Vec<_> = outcome.failures().collect();
                    println!(
                        "{} of {} seeds finished; summary at {}",
                        outcome.runs.len() - failed.len(),
                        outcome.runs.len(),
                        outcome.summary_file.display()
                    );
                    if failed.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Verify { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail_load(&config, e),
            };
            match verify_config(&cfg) {
                Ok(checks) => {
                    for c in &checks {
                        println!("{c}");
                    }
                    if checks.iter().all(|c| c.passed) {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Slope { csv, column, range } => {
            match read_column(&csv, &column)
                .and_then(|(ks, vs)| fit_rate_slope(&ks, &vs, range.0, range.1))
            {
                Ok(slope) => {
                    println!("{slope:.3}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}

fn fail_load(path: &std::path::Path, e: Error) -> ExitCode {
    eprintln!("error: {}: {e}", path.display());
    ExitCode::from(2)
}
