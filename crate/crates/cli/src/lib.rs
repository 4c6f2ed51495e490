//! Command-line front end for the `genbayes` experiments.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 analysis
//! precondition failure.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use genbayes::analysis::fit::{Aggregation, Statistic};

use crate::commands::Context;
use crate::config::Overrides;
pub use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "genbayes",
    version,
    about = "Convergence-rate experiments for generalized Bayesian posteriors"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(
        long,
        global = true,
        env = "GENBAYES_OUT",
        default_value = "genbayes-out",
        value_name = "DIR"
    )]
    pub out: PathBuf,
    /// Master seed; overrides `experiment.master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Overrides `experiment.replicates`.
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Record wall-clock times in results and manifests. Timed outputs are
    /// not reproducible byte for byte.
    #[arg(long, global = true)]
    pub timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the replicate grid and write results.csv.
    Run {
        /// Write every chain to chains/.
        #[arg(long)]
        dump_chains: bool,
        /// Write every simulated dataset to datasets/.
        #[arg(long)]
        dump_datasets: bool,
    },
    /// Fit log-log convergence rates to a results table.
    Rates {
        /// Results table (default: <out>/results.csv).
        results: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StatisticArg::Excess)]
        statistic: StatisticArg,
        /// Average log values instead of taking the log of the mean.
        #[arg(long)]
        mean_of_logs: bool,
    },
    /// Numerical checks of the assumptions behind the rates.
    Diagnose {
        #[command(subcommand)]
        probe: Probe,
    },
    /// Print the version.
    Version,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Probe {
    /// Second moment of the excess loss against excess risk.
    Bernstein,
    /// Moment of the loss envelope over the prior support.
    Envelope,
    /// Posterior tail mass beyond a shrinking risk threshold.
    Concentration,
    /// Theoretical rate bounds.
    Bounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatisticArg {
    /// Excess risk over the Bayes risk.
    Excess,
    /// Raw risk.
    Raw,
}

impl From<StatisticArg> for Statistic {
    fn from(s: StatisticArg) -> Self {
        match s {
            StatisticArg::Excess => Statistic::MeanExcess,
            StatisticArg::Raw => Statistic::MeanRisk,
        }
    }
}

fn context(cli: &Cli) -> Context {
    let (dump_chains, dump_datasets) = match cli.command {
        Command::Run {
            dump_chains,
            dump_datasets,
        } => (dump_chains, dump_datasets),
        _ => (false, false),
    };
    Context {
        config: cli.config.clone(),
        out: cli.out.clone(),
        overrides: Overrides {
            seed: cli.seed,
            replicates: cli.replicates,
        },
        workers: cli.workers,
        timing: cli.timing,
        dump_chains,
        dump_datasets,
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let ctx = context(cli);
    match &cli.command {
        Command::Run { .. } => commands::run(&ctx, stdout).map(drop),
        Command::Rates {
            results,
            statistic,
            mean_of_logs,
        } => {
            let path = results
                .clone()
                .unwrap_or_else(|| ctx.out.join(commands::RESULTS_FILE));
            let aggregation = if *mean_of_logs {
                Aggregation::MeanOfLogs
            } else {
                Aggregation::Mean
            };
            commands::rates(&ctx, &path, (*statistic).into(), aggregation, stdout).map(drop)
        }
        Command::Diagnose { probe } => match probe {
            Probe::Bernstein => commands::bernstein(&ctx, stdout),
            Probe::Envelope => commands::envelope(&ctx, stdout),
            Probe::Concentration => commands::concentration(&ctx, stdout),
            Probe::Bounds => commands::bounds(&ctx, stdout),
        }
        .map(drop),
        Command::Version => {
            let _ = writeln!(stdout, "genbayes {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
