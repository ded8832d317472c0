mod check;
mod config;
mod eval;
mod plot;
mod train;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Learn, verify and evaluate equivariant regression estimators.
#[derive(Debug, Parser)]
#[command(name = "amc", version)]
struct Cli {
    /// Worker threads; 1 gives bit-reproducible runs [default: logical cores]
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pretrain and adversarially train an estimator against a prior generator
    Train(train::TrainArgs),
    /// Run equivariance, gradient, standardization and prior-constraint checks
    Check(check::CheckArgs),
    /// Estimate risks of estimators under evaluation priors or a CSV dataset
    Eval(eval::EvalArgs),
}

/// How a subcommand failed; maps onto the exit code.
#[derive(Debug)]
pub enum Failure {
    /// A check did not pass (exit 1).
    Check,
    /// Bad flags or configuration, found before any compute (exit 2).
    Usage(String),
    /// Anything that went wrong while computing (exit 3).
    Runtime(amc_core::Error),
}

impl From<amc_core::Error> for Failure {
    fn from(e: amc_core::Error) -> Self {
        Failure::Runtime(e)
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(msg.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Check(a) => check::run(a),
        Command::Eval(a) => eval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
