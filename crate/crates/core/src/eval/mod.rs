//! Monte Carlo risk estimation and classical baselines.

mod baselines;
mod harness;
mod lasso;
mod nnls;
mod stacking;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

pub use baselines::{MeanEstimator, Ols, OlsFit};
pub use harness::{feature_noising_harness, load_csv, CsvTable, HarnessConfig, HarnessResult, Replication};
pub use lasso::{fold_assignment, LambdaChoice, LassoCv, LassoFit};
pub use nnls::{nnls, projected_gradient_nnls, NnlsSolution};
pub use stacking::{nnls_stack, StackedEnsemble, StackedEstimator};

use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::net::Dataset;
use crate::priors::DistributionSource;
use crate::rng::{substream, Rng};

/// A regression procedure: maps a dataset to predictions at new points.
pub trait Estimator: Sync {
    fn name(&self) -> String;
    /// Predictions at the rows of `x0`.
    fn predict(&self, d: &Dataset, x0: &DMatrix<f64>) -> Result<Vec<f64>>;
}

impl<E: Estimator + ?Sized> Estimator for &E {
    fn name(&self) -> String {
        (**self).name()
    }

    fn predict(&self, d: &Dataset, x0: &DMatrix<f64>) -> Result<Vec<f64>> {
        (**self).predict(d, x0)
    }
}

impl<E: Estimator + ?Sized + Send> Estimator for Box<E> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn predict(&self, d: &Dataset, x0: &DMatrix<f64>) -> Result<Vec<f64>> {
        (**self).predict(d, x0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_replications: usize,
    pub skipped: usize,
    pub setting: String,
}

impl RiskEstimate {
    /// Mean and standard error (sample SD over sqrt(count)) of `values`.
    pub fn from_values(values: &[f64], skipped: usize, setting: impl Into<String>) -> Result<Self> {
        let k = values.len();
        if k < 2 {
            return Err(Error::invalid(format!("need at least 2 replications, got {k}")));
        }
        let mean = pairwise_sum(values) / k as f64;
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let sd = (pairwise_sum(&sq) / (k - 1) as f64).sqrt();
        let est = RiskEstimate {
            mean,
            std_error: sd / (k as f64).sqrt(),
            n_replications: k,
            skipped,
            setting: setting.into(),
        };
        if !est.mean.is_finite() || !est.std_error.is_finite() {
            return Err(Error::NonFinite(format!("risk estimate for {}", est.setting)));
        }
        Ok(est)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskConfig {
    pub n: usize,
    pub n_eval: usize,
    pub reps: usize,
    pub seed: u64,
}

/// Runs `reps` replications of `f`, each with its own substream keyed by
/// the replication index. `Ok(None)` marks a skipped replication; more
/// than 1% skipped is an error.
pub fn estimate_risk_with<F>(reps: usize, seed: u64, setting: &str, f: F) -> Result<RiskEstimate>
where
    F: Fn(usize, &mut Rng) -> Result<Option<f64>> + Sync,
{
    if reps < 2 {
        return Err(Error::invalid(format!("need at least 2 replications, got {reps}")));
    }
    let outcomes: Vec<Option<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = substream(seed, &[r as u64]);
            f(r, &mut rng)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let skipped = reps - values.len();
    if skipped * 100 > reps {
        return Err(Error::Convergence(format!(
            "{skipped} of {reps} replications failed for {setting}"
        )));
    }
    RiskEstimate::from_values(&values, skipped, setting)
}

/// Standardized mean squared error of `est` against the noiseless
/// regression function, averaged over distributions from `source`.
pub fn estimate_risk(
    est: &dyn Estimator,
    source: &dyn DistributionSource,
    cfg: RiskConfig,
) -> Result<RiskEstimate> {
    let label = format!("{}|{}|n={}", est.name(), source.describe(), cfg.n);
    estimate_risk_with(cfg.reps, cfg.seed, &label, |_, rng| {
        let dist = source.draw(rng)?;
        let draw = dist.sample(cfg.n, cfg.n_eval, rng)?;
        let pred = match est.predict(&draw.dataset, &draw.x0) {
            Ok(p) if p.iter().all(|v| v.is_finite()) => p,
            _ => return Ok(None),
        };
        let sq: Vec<f64> = pred
            .iter()
            .zip(&draw.target)
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        let sigma2 = dist.noise_sd * dist.noise_sd;
        Ok(Some(pairwise_sum(&sq) / sq.len() as f64 / sigma2))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::{EvaluationPrior, Setting, Variant};

    #[test]
    fn standard_error_formula() {
        let r = RiskEstimate::from_values(&[1.0, 2.0, 3.0, 4.0], 0, "t").unwrap();
        assert_eq!(r.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((r.std_error - sd / 2.0).abs() < 1e-15);
        assert!(RiskEstimate::from_values(&[1.0], 0, "t").is_err());
    }

    #[test]
    fn skip_budget() {
        let ok = estimate_risk_with(200, 1, "t", |r, _| Ok((r != 0).then_some(1.0))).unwrap();
        assert_eq!(ok.skipped, 1);
        let bad = estimate_risk_with(200, 1, "t", |r, _| Ok((r > 2).then_some(1.0)));
        assert!(bad.is_err());
    }

    #[test]
    fn two_replications_give_finite_error() {
        let prior = EvaluationPrior::new(Setting::SparseLinear, 1, 3, Variant::Boundary).unwrap();
        let cfg = RiskConfig {
            n: 20,
            n_eval: 10,
            reps: 2,
            seed: 0,
        };
        let r = estimate_risk(&Ols, &prior, cfg).unwrap();
        assert!(r.std_error.is_finite() && r.std_error >= 0.0);
    }
}
