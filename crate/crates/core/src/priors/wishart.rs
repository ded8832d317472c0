use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{ChiSquared, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Feature correlation prior: normalized inverse of a Wishart draw with
/// scale `wishart_scale * I` and `wishart_df` degrees of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeaturePriorConfig {
    pub p: usize,
    pub wishart_scale: f64,
    pub wishart_df: f64,
}

impl FeaturePriorConfig {
    pub fn new(p: usize) -> Self {
        FeaturePriorConfig {
            p,
            wishart_scale: 2.0,
            wishart_df: 20.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::invalid("feature prior needs p >= 1"));
        }
        if !(self.wishart_df >= self.p as f64) {
            return Err(Error::invalid(format!(
                "wishart df {} must be at least p = {}",
                self.wishart_df, self.p
            )));
        }
        if !(self.wishart_scale > 0.0) {
            return Err(Error::invalid("wishart scale must be positive"));
        }
        Ok(())
    }
}

/// Bartlett factor `A`: chi diagonal, standard normal below it.
fn bartlett_factor(p: usize, df: f64, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi2 = ChiSquared::new(df - i as f64).map_err(|e| Error::invalid(e.to_string()))?;
        a[(i, i)] = rng.sample(chi2).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    Ok(a)
}

/// `diag(M)^{-1/2} M diag(M)^{-1/2}` with the diagonal set to exactly one.
pub fn correlation_from(m: &DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows();
    let d: Vec<f64> = (0..p).map(|i| m[(i, i)].sqrt()).collect();
    DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { m[(i, j)] / (d[i] * d[j]) })
}

fn draw_once(cfg: &FeaturePriorConfig, rng: &mut Rng) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = cfg.p;
    // W = L A A^T L^T with L = sqrt(scale) I, so W^{-1} = B^T B / scale, B = A^{-1}.
    let a = bartlett_factor(p, cfg.wishart_df, rng)?;
    let b = a
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Singular("Bartlett factor".into()))?;
    let w_inv = (b.transpose() * &b) / cfg.wishart_scale;
    let sigma = correlation_from(&w_inv);
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Cholesky("feature correlation matrix".into()))?;
    Ok((sigma, chol.l()))
}

/// Draws a correlation matrix and its lower Cholesky factor. A numerically
/// indefinite draw is replaced once before giving up.
pub fn sample_feature_prior(cfg: &FeaturePriorConfig, rng: &mut Rng) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    cfg.validate()?;
    match draw_once(cfg, rng) {
        Ok(v) => Ok(v),
        Err(Error::Cholesky(_)) | Err(Error::Singular(_)) => draw_once(cfg, rng),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn scalar_case_is_one() {
        let mut rng = from_seed(1);
        for _ in 0..20 {
            let (s, l) = sample_feature_prior(&FeaturePriorConfig::new(1), &mut rng).unwrap();
            assert_eq!(s[(0, 0)], 1.0);
            assert_eq!(l[(0, 0)], 1.0);
        }
    }

    #[test]
    fn correlation_matrix_properties() {
        let mut rng = from_seed(2);
        for _ in 0..50 {
            let (s, l) = sample_feature_prior(&FeaturePriorConfig::new(10), &mut rng).unwrap();
            assert!(s.iter().all(|v| v.abs() <= 1.0));
            assert!((0..10).all(|i| s[(i, i)] == 1.0));
            assert!((&s - s.transpose()).amax() < 1e-15);
            assert!(s.clone().symmetric_eigen().eigenvalues.min() > 0.0);
            assert!((&l * l.transpose() - &s).amax() < 1e-12);
        }
    }

    #[test]
    fn df_below_p_rejected() {
        let cfg = FeaturePriorConfig {
            p: 5,
            wishart_scale: 2.0,
            wishart_df: 3.0,
        };
        assert!(sample_feature_prior(&cfg, &mut from_seed(0)).is_err());
    }
}
