use std::path::PathBuf;

use amc_core::verify::{run_suite, SuiteConfig};
use amc_core::{ArchitectureConfig, EstimatorParams};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::config::layered;
use crate::{CmdResult, Failure};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckArgs {
    /// JSON file with any of the long flag names (snake_case) as keys; flags override it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Estimator or trainer checkpoint to check [default: freshly initialized weights]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Random cases per equivariance and round-trip check [default: 100]
    #[arg(long)]
    pub cases: Option<usize>,
    /// Generator draws per prior-constraint check [default: 500]
    #[arg(long)]
    pub prior_samples: Option<usize>,
    /// Seed for weights and test cases [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: CheckArgs) -> CmdResult {
    let a = layered(&args, args.config.as_deref())?;
    let defaults = SuiteConfig::default();
    let cfg = SuiteConfig {
        cases: a.cases.unwrap_or(defaults.cases),
        prior_samples: a.prior_samples.unwrap_or(defaults.prior_samples),
        seed: a.seed.unwrap_or(defaults.seed),
    };
    let params = match &a.checkpoint {
        Some(dir) => EstimatorParams::load(dir)?,
        None => EstimatorParams::init(ArchitectureConfig::default(), cfg.seed)?,
    };
    let outcomes = run_suite(&params, &cfg)?;
    let width = outcomes.iter().map(|c| c.name.len()).max().unwrap_or(0);
    println!("{:<width$}  {:>6}  {:>12}  {:>10}  result", "check", "cases", "max dev", "tolerance");
    for c in &outcomes {
        println!(
            "{:<width$}  {:>6}  {:>12.3e}  {:>10.1e}  {}",
            c.name,
            c.cases,
            c.max_deviation,
            c.tolerance,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    let failed = outcomes.iter().filter(|c| !c.passed()).count();
    if failed > 0 {
        println!("{failed} of {} checks failed", outcomes.len());
        return Err(Failure::Check);
    }
    println!("all {} checks passed", outcomes.len());
    Ok(())
}
