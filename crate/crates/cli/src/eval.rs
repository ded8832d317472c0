use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use amc_core::eval::{
    estimate_risk, feature_noising_harness, load_csv, HarnessConfig, LassoCv, MeanEstimator, Ols, RiskConfig,
    StackedEstimator,
};
use amc_core::linalg::tensor_from_matrix;
use amc_core::net::symmetrize;
use amc_core::priors::{DistributionSource, EvaluationPrior, Regression, ScenarioSet, Variant};
use amc_core::rng::substream;
use amc_core::{Estimator, EstimatorParams, RiskEstimate, SampledDistribution, Setting};
use clap::Args;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::layered;
use crate::plot::{line_plot, Series};
use crate::{usage, CmdResult, Failure};

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// JSON file with any of the long flag names (snake_case) as keys; flags override it
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Comma-separated list from ols, lasso, mean, amc, amc_sym, stacked [default: ols]
    #[arg(long)]
    pub estimator: Option<String>,
    /// Estimator or trainer checkpoint, required by amc, amc_sym and stacked
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Model class: linear or flam [default: linear]
    #[arg(long)]
    pub setting: Option<String>,
    /// boundary, interior, null, or scenarioK-sparse / scenarioK-dense [default: boundary for linear, scenario1-sparse for flam]
    #[arg(long)]
    pub variant: Option<String>,
    /// Active components s; in CSV mode the number of real features kept [default: 1]
    #[arg(long)]
    pub sparsity: Option<usize>,
    /// Number of features; in CSV mode the total after noise padding [default: 10]
    #[arg(long)]
    pub p: Option<usize>,
    /// Training sample size [default: 100]
    #[arg(long)]
    pub n: Option<usize>,
    /// Points per replication at which the prediction error is averaged [default: 100]
    #[arg(long)]
    pub n_eval: Option<usize>,
    /// Monte Carlo replications [default: 5000]
    #[arg(long)]
    pub reps: Option<usize>,
    /// Seed; replication r uses its own substream, so estimators see identical data [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file of FLAM scenarios replacing the built-in ones
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Results CSV [default: results.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for SVG plots of fitted curves along each active feature
    #[arg(long)]
    pub plot_fits: Option<PathBuf>,
    /// Evaluate on a real dataset instead of a simulated prior
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Outcome column of --csv
    #[arg(long)]
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Ols,
    Lasso,
    Mean,
    Amc,
    AmcSym,
    Stacked,
}

fn parse_kinds(list: &str) -> Result<Vec<Kind>, Failure> {
    list.split(',')
        .map(|s| match s.trim() {
            "ols" => Ok(Kind::Ols),
            "lasso" => Ok(Kind::Lasso),
            "mean" => Ok(Kind::Mean),
            "amc" => Ok(Kind::Amc),
            "amc_sym" => Ok(Kind::AmcSym),
            "stacked" => Ok(Kind::Stacked),
            other => Err(usage(format!(
                "unknown estimator {other:?} (expected ols, lasso, mean, amc, amc_sym or stacked)"
            ))),
        })
        .collect()
}

fn build(kind: Kind, net: Option<&EstimatorParams>, seed: u64) -> Box<dyn Estimator + Send> {
    let net = || net.expect("checked before building").clone();
    match kind {
        Kind::Ols => Box::new(Ols),
        Kind::Lasso => Box::new(LassoCv::with_seed(seed)),
        Kind::Mean => Box::new(MeanEstimator),
        Kind::Amc => Box::new(net()),
        Kind::AmcSym => Box::new(symmetrize(net())),
        Kind::Stacked => Box::new(StackedEstimator::new(
            vec![Box::new(Ols), Box::new(LassoCv::with_seed(seed)), Box::new(net())],
            seed,
        )),
    }
}

struct Plan {
    kinds: Vec<Kind>,
    net: Option<EstimatorParams>,
    setting: Setting,
    variant: Variant,
    sparsity: usize,
    p: usize,
    risk: RiskConfig,
    scenarios: Option<ScenarioSet>,
    out: PathBuf,
}

fn prior_for(plan: &Plan, variant: Variant) -> Result<EvaluationPrior, Failure> {
    let prior = EvaluationPrior::new(plan.setting, plan.sparsity, plan.p, variant).map_err(usage)?;
    match &plan.scenarios {
        Some(set) => prior.with_scenarios(set.clone()).map_err(usage),
        None => Ok(prior),
    }
}

pub fn run(args: EvalArgs) -> CmdResult {
    let a = layered(&args, args.config.as_deref())?;
    let kinds = parse_kinds(a.estimator.as_deref().unwrap_or("ols"))?;
    let needs_net = kinds.iter().any(|k| matches!(k, Kind::Amc | Kind::AmcSym | Kind::Stacked));
    let seed = a.seed.unwrap_or(0);
    let reps = a.reps.unwrap_or(5000);
    let n = a.n.unwrap_or(100);
    let sparsity = a.sparsity.unwrap_or(1);
    let p = a.p.unwrap_or(10);
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from("results.csv"));

    let net = match (&a.checkpoint, needs_net) {
        (Some(dir), true) => {
            if !dir.exists() {
                return Err(usage(format!("checkpoint {} does not exist", dir.display())));
            }
            Some(EstimatorParams::load(dir)?)
        }
        (None, true) => return Err(usage("amc, amc_sym and stacked need --checkpoint")),
        _ => None,
    };
    if reps < 2 {
        return Err(usage("--reps must be at least 2"));
    }

    if let Some(csv) = &a.csv {
        let outcome = a.outcome.as_deref().ok_or_else(|| usage("--csv needs --outcome"))?;
        let estimators: Vec<Box<dyn Estimator + Send>> =
            kinds.iter().map(|&k| build(k, net.as_ref(), seed)).collect();
        return run_csv(csv, outcome, &estimators, HarnessConfig { s: sparsity, p_total: p, n_train: n, reps, seed }, &out);
    }

    let setting: Setting = a.setting.as_deref().unwrap_or("linear").parse().map_err(usage)?;
    let default_variant = match setting {
        Setting::SparseLinear => "boundary",
        Setting::Flam => "scenario1-sparse",
    };
    let variant: Variant = a.variant.as_deref().unwrap_or(default_variant).parse().map_err(usage)?;
    let scenarios = match &a.scenarios {
        Some(path) => Some(ScenarioSet::load(path).map_err(usage)?),
        None => None,
    };
    let plan = Plan {
        kinds,
        net,
        setting,
        variant,
        sparsity,
        p,
        risk: RiskConfig {
            n,
            n_eval: a.n_eval.unwrap_or(100),
            reps,
            seed,
        },
        scenarios,
        out,
    };
    // Validates the setting/variant pair before any compute.
    let prior = prior_for(&plan, plan.variant)?;

    let mut rows = Vec::new();
    for &k in &plan.kinds {
        let est = build(k, plan.net.as_ref(), seed);
        let r = estimate_risk(est.as_ref(), &prior, plan.risk)?;
        println!("{:<10} {:<18} n={:<5} risk {:.5} (se {:.5}, skipped {})", est.name(), plan.variant, n, r.mean, r.std_error, r.skipped);
        rows.push((est.name(), r));
    }
    write_results(&plan, &rows)?;
    if let Some(dir) = &a.plot_fits {
        plot_fits(&plan, dir)?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| usage(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(amc_core::Error::Invalid(format!("{}: {e}", path.display()))))
}

fn write_results(plan: &Plan, rows: &[(String, RiskEstimate)]) -> Result<(), Failure> {
    let mut text = String::from("estimator,setting,variant,sparsity,p,n,reps,mean,std_error,skipped\n");
    for (name, r) in rows {
        let _ = writeln!(
            text,
            "{name},{},{},{},{},{},{},{:.17e},{:.17e},{}",
            plan.setting, plan.variant, plan.sparsity, plan.p, plan.risk.n, r.n_replications, r.mean, r.std_error, r.skipped
        );
    }
    write_file(&plan.out, &text)
}

fn run_csv(
    path: &Path,
    outcome: &str,
    estimators: &[Box<dyn Estimator + Send>],
    cfg: HarnessConfig,
    out: &Path,
) -> CmdResult {
    let table = load_csv(path, outcome).map_err(usage)?;
    let refs: Vec<&dyn Estimator> = estimators.iter().map(|e| e.as_ref() as &dyn Estimator).collect();
    let res = feature_noising_harness(&table, &refs, cfg)?;
    let mut text = String::from("estimator,data,s,p_total,n_train,reps,mean,std_error\n");
    for (name, r) in res.estimators.iter().zip(&res.summaries) {
        println!("{name:<10} mse {:.5} (se {:.5})", r.mean, r.std_error);
        let _ = writeln!(
            text,
            "{name},{},{},{},{},{},{:.17e},{:.17e}",
            path.display(),
            cfg.s,
            cfg.p_total,
            cfg.n_train,
            r.n_replications,
            r.mean,
            r.std_error
        );
    }
    write_file(out, &text)
}

/// Raw features the regression function depends on.
fn active_features(dist: &SampledDistribution) -> Vec<usize> {
    let coords: Vec<usize> = match &dist.mu {
        Regression::Zero => vec![0],
        Regression::Linear { beta } => (0..beta.numel()).filter(|&j| beta.data()[j] != 0.0).collect(),
        Regression::Steps { knots, .. } => (0..knots.shape()[1]).collect(),
        Regression::Additive(c) => c.iter().map(|(j, _)| *j).collect(),
    };
    coords.into_iter().map(|j| dist.perm[j]).collect()
}

fn plot_fits(plan: &Plan, dir: &Path) -> CmdResult {
    let variants: Vec<Variant> = match plan.variant {
        Variant::Scenario { density, .. } => {
            let count = plan
                .scenarios
                .as_ref()
                .map(|s| s.scenarios.len())
                .unwrap_or_else(|| ScenarioSet::builtin().scenarios.len());
            (1..=count).map(|index| Variant::Scenario { index, density }).collect()
        }
        v => vec![v],
    };
    let estimators: Vec<Box<dyn Estimator + Send>> =
        plan.kinds.iter().map(|&k| build(k, plan.net.as_ref(), plan.risk.seed)).collect();
    for (vi, &variant) in variants.iter().enumerate() {
        let prior = prior_for(plan, variant)?;
        let mut rng = substream(plan.risk.seed, &[u64::MAX, vi as u64]);
        let dist = prior.draw(&mut rng)?;
        let draw = dist.sample(plan.risk.n, 1, &mut rng)?;
        let x = draw.dataset.x();
        for f in active_features(&dist) {
            let col = x.column(f);
            let (lo, hi) = (col.min(), col.max());
            let grid: Vec<f64> = (0..200).map(|i| lo + (hi - lo) * i as f64 / 199.0).collect();
            let x0 = DMatrix::from_fn(200, plan.p, |i, j| if j == f { grid[i] } else { 0.0 });
            let truth = dist.mean_function(&tensor_from_matrix(&x0))?;
            let mut series = vec![Series {
                label: "truth".into(),
                points: grid.iter().copied().zip(truth).collect(),
            }];
            for est in &estimators {
                let pred = est.predict(&draw.dataset, &x0)?;
                series.push(Series {
                    label: est.name(),
                    points: grid.iter().copied().zip(pred).collect(),
                });
            }
            let title = format!("{variant}, n={}, other features at zero", plan.risk.n);
            let svg = line_plot(&title, &format!("feature {f}"), &series);
            write_file(&dir.join(format!("{variant}-feature{f}.svg")), &svg)?;
        }
    }
    Ok(())
}
