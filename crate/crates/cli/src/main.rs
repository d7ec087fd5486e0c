//! `castel`: simulate, check, sweep and explore dead-spot relay scenarios
//! and generic coloured stochastic Petri nets.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on configuration error.

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "castel", version, about = "Coloured stochastic Petri nets for dead-spot message relay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate seeded runs and write traces plus a summary.
    Simulate(Common),
    /// Check a probabilistic formula statistically, and exactly with --exact.
    Check {
        #[command(flatten)]
        common: Common,
        /// File holding the formula text.
        #[arg(long)]
        formula: PathBuf,
        /// Also compute the exact probability on the explicit chain.
        #[arg(long)]
        exact: bool,
        /// Run the exact check on the unfolded net.
        #[arg(long)]
        unfold: bool,
    },
    /// Run a parameter grid and write aggregated and long-format CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// JSON grid: {"grid": {"N": [5, 10]}, "runs": 20, "metrics": [...]}.
        #[arg(long)]
        grid: PathBuf,
    },
    /// Export the reachability graph and its CTMC.
    Reach {
        #[command(flatten)]
        common: Common,
        /// Also unfold the net and compare both reachability graphs.
        #[arg(long)]
        unfold: bool,
    },
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Scenario JSON; the default dead-spot scenario when omitted.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Build the dead-spot net without `jmp`.
    #[arg(long)]
    pub no_jmp: bool,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn config(e: impl Into<anyhow::Error>) -> Failure {
        Failure::Config(e.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Failure {
        Failure::Runtime(e.into())
    }
}

pub type Outcome<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    let (name, common) = match &cli.command {
        Command::Simulate(c) => ("simulate", c),
        Command::Check { common, .. } => ("check", common),
        Command::Sweep { common, .. } => ("sweep", common),
        Command::Reach { common, .. } => ("reach", common),
    };
    let jobs = match common.jobs {
        Some(0) => return Err(Failure::config(anyhow::anyhow!("--jobs must be at least 1"))),
        Some(j) => j,
        None => rayon::current_num_threads(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(Failure::runtime)?;
    let started = Instant::now();
    pool.install(|| match &cli.command {
        Command::Simulate(c) => commands::simulate(c),
        Command::Check {
            common,
            formula,
            exact,
            unfold,
        } => commands::check(common, formula, *exact, *unfold),
        Command::Sweep { common, grid } => commands::sweep(common, grid),
        Command::Reach { common, unfold } => commands::reach(common, *unfold),
    })?;
    commands::write_timing(&common.out, name, jobs, started.elapsed().as_secs_f64())
}
