use nalgebra::{DMatrix, DVector};

use super::lasso::fold_assignment;
use super::nnls::nnls;
use super::Estimator;
use crate::error::{Error, Result};
use crate::net::Dataset;
use crate::rng::from_seed;

/// Non-negative combination weights of base estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedEnsemble {
    pub names: Vec<String>,
    pub weights: DVector<f64>,
    pub folds: usize,
    /// Out-of-fold base predictions the weights were fitted on (n x m).
    pub level_one: DMatrix<f64>,
}

/// Fits base estimators fold by fold, then regresses the outcome on their
/// out-of-fold predictions under non-negativity.
pub fn nnls_stack(bases: &[&dyn Estimator], d: &Dataset, folds: usize, seed: u64) -> Result<StackedEnsemble> {
    let n = d.n();
    if bases.is_empty() {
        return Err(Error::invalid("stacking needs at least one base estimator"));
    }
    if n < 20 {
        return Err(Error::invalid(format!("stacking needs n >= 20, got {n}")));
    }
    let k = folds.clamp(2, n);
    let fold = fold_assignment(n, k, &mut from_seed(seed));
    let mut z = DMatrix::zeros(n, bases.len());
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
        let val: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
        let dt = d.select_rows(&train)?;
        let xv = d.x().select_rows(&val);
        for (b, est) in bases.iter().enumerate() {
            let pred = est.predict(&dt, &xv)?;
            for (&i, v) in val.iter().zip(pred) {
                z[(i, b)] = v;
            }
        }
    }
    let sol = nnls(&z, d.y())?;
    Ok(StackedEnsemble {
        names: bases.iter().map(|e| e.name()).collect(),
        weights: sol.weights,
        folds: k,
        level_one: z,
    })
}

/// Stacked estimator: weights from [`nnls_stack`], base fits on all data.
pub struct StackedEstimator {
    pub bases: Vec<Box<dyn Estimator + Send>>,
    pub folds: usize,
    pub seed: u64,
}

impl StackedEstimator {
    pub fn new(bases: Vec<Box<dyn Estimator + Send>>, seed: u64) -> Self {
        StackedEstimator {
            bases,
            folds: 10,
            seed,
        }
    }
}

impl Estimator for StackedEstimator {
    fn name(&self) -> String {
        "stacked".into()
    }

    fn predict(&self, d: &Dataset, x0: &DMatrix<f64>) -> Result<Vec<f64>> {
        let refs: Vec<&dyn Estimator> = self.bases.iter().map(|b| b.as_ref() as &dyn Estimator).collect();
        let ens = nnls_stack(&refs, d, self.folds, self.seed)?;
        let mut out = vec![0.0; x0.nrows()];
        for (est, &w) in refs.iter().zip(ens.weights.iter()) {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(est.predict(d, x0)?) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}
