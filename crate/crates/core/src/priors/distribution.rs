use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::regression::Regression;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::permute_columns;
use crate::net::Dataset;
use crate::rng::Rng;

/// Marginal law of the feature vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureLaw {
    /// `N(0, sigma)` via the Cholesky factor.
    Gaussian,
    /// Independent `Unif(-half_width, half_width)` coordinates.
    Uniform { half_width: f64 },
}

/// One data-generating distribution: features, `mu_P(x) = mu(perm x)` and
/// Gaussian noise. `T = Var` while the regression function is still tied
/// to generator parameters on a tape.
#[derive(Debug, Clone)]
pub struct SampledDistribution<T = Tensor> {
    pub sigma: DMatrix<f64>,
    pub sigma_chol: DMatrix<f64>,
    pub mu: Regression<T>,
    /// `(perm x)_i = x[perm[i]]`.
    pub perm: Vec<usize>,
    pub features: FeatureLaw,
    pub noise_sd: f64,
}

/// Training sample plus evaluation points and noiseless targets there.
#[derive(Debug, Clone)]
pub struct DatasetSample<'t> {
    pub x: Tensor,
    pub y: Var<'t>,
    pub x0: Tensor,
    pub target: Var<'t>,
}

/// Plain-value version of a [`DatasetSample`].
#[derive(Debug, Clone)]
pub struct Draw {
    pub dataset: Dataset,
    pub x0: DMatrix<f64>,
    pub target: Vec<f64>,
}

impl<T> SampledDistribution<T> {
    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }

    fn draw_features(&self, rows: usize, rng: &mut Rng) -> Tensor {
        let p = self.p();
        let mut data = vec![0.0; rows * p];
        match self.features {
            FeatureLaw::Gaussian => {
                let mut v = vec![0.0; p];
                for row in data.chunks_exact_mut(p) {
                    for e in v.iter_mut() {
                        *e = rng.sample(StandardNormal);
                    }
                    for (i, out) in row.iter_mut().enumerate() {
                        *out = (0..=i).map(|j| self.sigma_chol[(i, j)] * v[j]).sum();
                    }
                }
            }
            FeatureLaw::Uniform { half_width } => {
                for e in &mut data {
                    *e = rng.random_range(-half_width..half_width);
                }
            }
        }
        Tensor::new(vec![rows, p], data).expect("feature buffer")
    }
}

impl SampledDistribution<Tensor> {
    pub fn bind<'t>(&self, tape: &'t Tape) -> SampledDistribution<Var<'t>> {
        SampledDistribution {
            sigma: self.sigma.clone(),
            sigma_chol: self.sigma_chol.clone(),
            mu: self.mu.bind(tape),
            perm: self.perm.clone(),
            features: self.features,
            noise_sd: self.noise_sd,
        }
    }

    /// `mu_P` at the rows of `x`.
    pub fn mean_function(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.mu.eval_values(&permute_columns(x, &self.perm))
    }

    /// Draws `n` observations and `n_eval` evaluation points.
    pub fn sample(&self, n: usize, n_eval: usize, rng: &mut Rng) -> Result<Draw> {
        let tape = Tape::new();
        sample_dataset(&self.bind(&tape), &tape, n, n_eval, rng)?.to_draw()
    }
}

impl<'t> SampledDistribution<Var<'t>> {
    pub fn detach(&self) -> SampledDistribution<Tensor> {
        SampledDistribution {
            sigma: self.sigma.clone(),
            sigma_chol: self.sigma_chol.clone(),
            mu: self.mu.detach(),
            perm: self.perm.clone(),
            features: self.features,
            noise_sd: self.noise_sd,
        }
    }
}

/// Draws `X` (n rows), the noise, then `X0` (n_eval rows) in that order.
/// Outcomes and targets stay differentiable through `mu`.
pub fn sample_dataset<'t>(
    dist: &SampledDistribution<Var<'t>>,
    tape: &'t Tape,
    n: usize,
    n_eval: usize,
    rng: &mut Rng,
) -> Result<DatasetSample<'t>> {
    if n < 2 {
        return Err(Error::invalid(format!("sample size must be at least 2, got {n}")));
    }
    let x = dist.draw_features(n, rng);
    let eps: Vec<f64> = (0..n)
        .map(|_| dist.noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let x0 = dist.draw_features(n_eval, rng);

    let signal = dist.mu.eval(tape, &permute_columns(&x, &dist.perm))?;
    let y = signal.add(&tape.constant(Tensor::vector(eps)))?;
    let target = dist.mu.eval(tape, &permute_columns(&x0, &dist.perm))?;
    Ok(DatasetSample { x, y, x0, target })
}

impl DatasetSample<'_> {
    pub fn to_dataset(&self) -> Result<Dataset> {
        let (n, p) = (self.x.shape()[0], self.x.shape()[1]);
        Dataset::new(
            DMatrix::from_row_slice(n, p, self.x.data()),
            DVector::from_column_slice(self.y.value().data()),
        )
    }

    pub fn to_draw(&self) -> Result<Draw> {
        let (m, p) = (self.x0.shape()[0], self.x0.shape()[1]);
        Ok(Draw {
            dataset: self.to_dataset()?,
            x0: DMatrix::from_row_slice(m, p, self.x0.data()),
            target: self.target.value().data().to_vec(),
        })
    }
}

/// Uniformly random permutation of `0..p`.
pub(crate) fn random_permutation(p: usize, rng: &mut Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(rng);
    perm
}
