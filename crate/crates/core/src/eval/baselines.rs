use nalgebra::{DMatrix, DVector};

use super::Estimator;
use crate::error::{Error, Result};
use crate::net::Dataset;

/// Least squares with an intercept.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ols;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub intercept: f64,
    pub coef: DVector<f64>,
}

impl OlsFit {
    pub fn predict(&self, x0: &DMatrix<f64>) -> Vec<f64> {
        (x0 * &self.coef).iter().map(|v| v + self.intercept).collect()
    }
}

impl Ols {
    /// Centered normal equations solved by Cholesky.
    pub fn fit(d: &Dataset) -> Result<OlsFit> {
        let (n, p) = (d.n(), d.p());
        if n <= p + 1 {
            return Err(Error::Singular(format!("OLS needs n > p + 1, got n={n}, p={p}")));
        }
        let x_bar = d.x().row_mean();
        let y_bar = d.y().mean();
        let mut xc = d.x().clone();
        for mut row in xc.row_iter_mut() {
            row -= &x_bar;
        }
        let yc = d.y().add_scalar(-y_bar);
        let gram = xc.transpose() * &xc;
        let rhs = xc.transpose() * yc;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Singular("OLS normal equations".into()))?;
        let coef = chol.solve(&rhs);
        let intercept = y_bar - (x_bar * &coef)[(0, 0)];
        Ok(OlsFit { intercept, coef })
    }
}

impl Estimator for Ols {
    fn name(&self) -> String {
        "ols".into()
    }

    fn predict(&self, d: &Dataset, x0: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(Ols::fit(d)?.predict(x0))
    }
}

/// Predicts the outcome mean everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanEstimator;

impl Estimator for MeanEstimator {
    fn name(&self) -> String {
        "mean".into()
    }

    fn predict(&self, d: &Dataset, x0: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(vec![d.y().mean(); x0.nrows()])
    }
}
