//! `qptorus`: solve, continue and classify quasi-periodic tori from a TOML
//! run configuration.
//!
//! Exit status: 0 on success, 1 for configuration errors, 2 for numerical
//! failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{NumericalFailure, Overrides};

#[derive(Parser)]
#[command(name = "qptorus", version, about = "Quasi-periodic tori by Fourier-series shooting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides run.output.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads; overrides run.workers.
    #[arg(short, long)]
    workers: Option<usize>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            output: self.output.clone(),
            workers: self.workers,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Newton solve at fixed parameter; writes snapshot.json.
    Solve(Common),
    /// Trace a solution branch; writes branch.csv and branch.json.
    Continue(Common),
    /// Lyapunov exponents or Floquet multipliers of a snapshot.
    Stability {
        #[command(flatten)]
        common: Common,
        #[arg(short, long)]
        snapshot: PathBuf,
    },
    /// Run the built-in self-checks.
    Check {
        /// Worker counts for the determinism check, e.g. 1,2,4.
        #[arg(long, value_delimiter = ',')]
        workers: Vec<usize>,
        /// Deliberately break a component (rotation-sign).
        #[arg(long)]
        inject_fault: Option<String>,
    },
    /// Time one shooting evaluation per worker count; writes bench.csv.
    Bench {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(short, long, value_delimiter = ',', default_value = "1,2,4,8")]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<NumericalFailure>().is_some() {
        return 2;
    }
    if let Some(q) = e.downcast_ref::<qptorus::Error>() {
        return if q.is_numerical() { 2 } else { 1 };
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Solve(c) => commands::solve(&c.config, &c.overrides()),
        Command::Continue(c) => commands::continue_branch(&c.config, &c.overrides()),
        Command::Stability { common, snapshot } => commands::stability(&common.config, snapshot, &common.overrides()),
        Command::Check { workers, inject_fault } => commands::check(workers.clone(), inject_fault.as_deref()),
        Command::Bench {
            config,
            output,
            workers,
            repeats,
        } => commands::bench(
            config,
            workers,
            *repeats,
            &Overrides {
                output: output.clone(),
                workers: None,
            },
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
