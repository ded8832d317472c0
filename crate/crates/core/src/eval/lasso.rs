use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::Estimator;
use crate::error::{Error, Result};
use crate::net::{column_stats, Dataset};
use crate::rng::{from_seed, Rng};

/// Which grid value the final fit uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    CrossValidated,
    /// The last (smallest) grid value, skipping cross-validation.
    SmallestOnGrid,
}

/// Lasso on standardized features with the penalty picked by K-fold
/// cross-validation over a geometric grid below `lambda_max`.
#[derive(Debug, Clone)]
pub struct LassoCv {
    pub folds: usize,
    pub n_lambda: usize,
    pub lambda_ratio: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub seed: u64,
    pub choice: LambdaChoice,
}

impl Default for LassoCv {
    fn default() -> Self {
        LassoCv {
            folds: 10,
            n_lambda: 100,
            lambda_ratio: 1e-3,
            tol: 1e-7,
            max_sweeps: 100_000,
            seed: 0,
            choice: LambdaChoice::CrossValidated,
        }
    }
}

/// Fitted lasso. Coefficients and penalty live on the scale where both
/// the features and the outcome are standardized.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub lambda: f64,
    pub coef: DVector<f64>,
    pub x_mean: Vec<f64>,
    pub x_sd: Vec<f64>,
    pub y_mean: f64,
    pub y_sd: f64,
}

impl LassoFit {
    pub fn predict(&self, x0: &DMatrix<f64>) -> Vec<f64> {
        x0.row_iter()
            .map(|row| {
                let mut v = 0.0;
                for j in 0..row.len() {
                    if self.x_sd[j] > 0.0 {
                        v += self.coef[j] * (row[j] - self.x_mean[j]) / self.x_sd[j];
                    }
                }
                self.y_mean + self.y_sd * v
            })
            .collect()
    }
}

/// Gram form of a standardized problem: `(1/2n)|y - X b|^2 + lambda |b|_1`
/// only needs `X^T X / n` and `X^T y / n`.
struct Problem {
    gram: DMatrix<f64>,
    corr: DVector<f64>,
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    y_mean: f64,
    y_sd: f64,
}

impl Problem {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let (n, p) = x.shape();
        let rows: Vec<f64> = x.transpose().as_slice().to_vec();
        let (x_mean, x_sd) = column_stats(&rows, n, p);
        let xs = DMatrix::from_fn(n, p, |i, j| {
            if x_sd[j] > 0.0 {
                (x[(i, j)] - x_mean[j]) / x_sd[j]
            } else {
                0.0
            }
        });
        let (ym, ysd) = column_stats(y.as_slice(), n, 1);
        let (y_mean, y_sd) = (ym[0], ysd[0]);
        let ys = if y_sd > 0.0 {
            y.map(|v| (v - y_mean) / y_sd)
        } else {
            DVector::zeros(n)
        };
        let nf = n as f64;
        Problem {
            gram: xs.transpose() * &xs / nf,
            corr: xs.transpose() * ys / nf,
            x_mean,
            x_sd,
            y_mean,
            y_sd,
        }
    }

    fn lambda_max(&self) -> f64 {
        self.corr.amax()
    }

    /// Coordinate descent over `lambdas` in order, warm-starting each fit
    /// from the previous one.
    fn path(&self, lambdas: &[f64], tol: f64, max_sweeps: usize) -> Result<Vec<DVector<f64>>> {
        let p = self.corr.len();
        let mut b: DVector<f64> = DVector::zeros(p);
        let mut r = self.corr.clone();
        let mut out = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let mut converged = false;
            for _ in 0..max_sweeps {
                let mut max_change = 0.0f64;
                for j in 0..p {
                    let gjj = self.gram[(j, j)];
                    if gjj <= 0.0 {
                        continue;
                    }
                    let old = b[j];
                    let z = r[j] + gjj * old;
                    let new = soft_threshold(z, lambda) / gjj;
                    let delta: f64 = new - old;
                    if delta != 0.0 {
                        r.axpy(-delta, &self.gram.column(j), 1.0);
                        b[j] = new;
                        max_change = max_change.max(delta.abs());
                    }
                }
                if max_change < tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Convergence(format!(
                    "lasso coordinate descent did not converge in {max_sweeps} sweeps at lambda {lambda:e}"
                )));
            }
            out.push(b.clone());
        }
        Ok(out)
    }

    fn fit(&self, coef: DVector<f64>, lambda: f64) -> LassoFit {
        LassoFit {
            lambda,
            coef,
            x_mean: self.x_mean.clone(),
            x_sd: self.x_sd.clone(),
            y_mean: self.y_mean,
            y_sd: self.y_sd,
        }
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Fold label of every row: a shuffled round-robin, so fold sizes differ
/// by at most one.
pub fn fold_assignment(n: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

impl LassoCv {
    pub fn with_seed(seed: u64) -> Self {
        LassoCv {
            seed,
            ..Self::default()
        }
    }

    fn grid(&self, lambda_max: f64) -> Vec<f64> {
        if self.n_lambda == 1 {
            return vec![lambda_max];
        }
        let step = self.lambda_ratio.ln() / (self.n_lambda - 1) as f64;
        (0..self.n_lambda)
            .map(|i| lambda_max * (step * i as f64).exp())
            .collect()
    }

    /// Lasso at a single penalty on the standardized scale.
    pub fn fit_fixed(&self, d: &Dataset, lambda: f64) -> Result<LassoFit> {
        let prob = Problem::new(d.x(), d.y());
        let coef = prob.path(&[lambda], self.tol, self.max_sweeps)?.pop().expect("one fit");
        Ok(prob.fit(coef, lambda))
    }

    pub fn fit(&self, d: &Dataset) -> Result<LassoFit> {
        let n = d.n();
        if n < 20 {
            return Err(Error::invalid(format!("lasso needs n >= 20, got {n}")));
        }
        let full = Problem::new(d.x(), d.y());
        let lambda_max = full.lambda_max();
        if lambda_max == 0.0 {
            return Ok(full.fit(DVector::zeros(d.p()), 0.0));
        }
        let grid = self.grid(lambda_max);
        let chosen = match self.choice {
            LambdaChoice::SmallestOnGrid => grid.len() - 1,
            LambdaChoice::CrossValidated => self.cross_validate(d, &grid)?,
        };
        let coef = full
            .path(&grid[..=chosen], self.tol, self.max_sweeps)?
            .pop()
            .expect("non-empty path");
        Ok(full.fit(coef, grid[chosen]))
    }

    /// Grid index with the smallest mean validation error.
    fn cross_validate(&self, d: &Dataset, grid: &[f64]) -> Result<usize> {
        let n = d.n();
        let k = self.folds.min(n);
        let fold = fold_assignment(n, k, &mut from_seed(self.seed));
        let mut cv = vec![0.0; grid.len()];
        for f in 0..k {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != f).collect();
            let val: Vec<usize> = (0..n).filter(|&i| fold[i] == f).collect();
            let xt = d.x().select_rows(&train);
            let yt = DVector::from_iterator(train.len(), train.iter().map(|&i| d.y()[i]));
            let xv = d.x().select_rows(&val);
            let prob = Problem::new(&xt, &yt);
            for (li, coef) in prob.path(grid, self.tol, self.max_sweeps)?.into_iter().enumerate() {
                let pred = prob.fit(coef, grid[li]).predict(&xv);
                let mse = val
                    .iter()
                    .zip(&pred)
                    .map(|(&i, p)| (d.y()[i] - p).powi(2))
                    .sum::<f64>()
                    / val.len() as f64;
                cv[li] += mse / k as f64;
            }
        }
        let mut best = 0;
        for (i, v) in cv.iter().enumerate() {
            if *v < cv[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

impl Estimator for LassoCv {
    fn name(&self) -> String {
        match self.choice {
            LambdaChoice::CrossValidated => "lasso".into(),
            LambdaChoice::SmallestOnGrid => "lasso_min_lambda".into(),
        }
    }

    fn predict(&self, d: &Dataset, x0: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.fit(d)?.predict(x0))
    }
}
