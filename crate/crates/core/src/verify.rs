//! Self-checks run by `amc check`: equivariance of the network and its
//! layers, tape gradients, the standardization round trip and prior
//! constraints.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gradcheck::check_gradients;
use crate::linalg::tensor_from_matrix;
use crate::net::{
    deep_set_layer, exchangeable_matrix_layer, forward, standardize, ArchitectureConfig, Dataset,
    DeepSetWeights, EstimatorParams, ExchangeableWeights, NetWeights,
};
use crate::priors::{PriorConfig, PriorGeneratorParams, Regression, Setting};
use crate::rng::{substream, Rng};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tolerance
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteConfig {
    pub cases: usize,
    pub prior_samples: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            cases: 100,
            prior_samples: 500,
            seed: 0,
        }
    }
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn normal_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape")
}

fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// Relative error with a unit floor on the denominator.
fn rel_dev(got: &[f64], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(a, b)| {
            let d = (a - b).abs() / b.abs().max(1.0);
            if d.is_nan() {
                f64::INFINITY
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

/// A random transformed copy of `(d, x0)` together with the outcome map
/// `v -> shift + scale v` the predictions must follow.
pub struct Transformed {
    pub dataset: Dataset,
    pub x0: DMatrix<f64>,
    pub shift: f64,
    pub scale: f64,
}

/// Permutes observations and features, applies positive affine maps to
/// each feature and a positive affine map to the outcome.
pub fn random_transform(d: &Dataset, x0: &DMatrix<f64>, rng: &mut Rng) -> Result<Transformed> {
    let (n, p) = (d.n(), d.p());
    let rows = permutation(n, rng);
    let cols = permutation(p, rng);
    let a: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let b: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..10.0)).collect();
    let shift = rng.random_range(-3.0..3.0);
    let scale = rng.random_range(0.1..10.0);
    let feat = |m: &DMatrix<f64>, i: usize, j: usize| a[j] + b[j] * m[(i, cols[j])];
    let x = DMatrix::from_fn(n, p, |i, j| feat(d.x(), rows[i], j));
    let y = DVector::from_fn(n, |i, _| shift + scale * d.y()[rows[i]]);
    let x0t = DMatrix::from_fn(x0.nrows(), p, |i, j| feat(x0, i, j));
    Ok(Transformed {
        dataset: Dataset::new(x, y)?,
        x0: x0t,
        shift,
        scale,
    })
}

/// Largest relative deviation from exact equivariance over `cases` random
/// datasets with n in 3..=12 and p in 1..=6.
pub fn network_equivariance(params: &EstimatorParams, cases: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for c in 0..cases {
        let mut rng = substream(seed, &[1, c as u64]);
        let n = rng.random_range(3..=12);
        let p = rng.random_range(1..=6);
        let d = Dataset::new(normal_matrix(n, p, &mut rng), normal_matrix(n, 1, &mut rng).column(0).into())?;
        let x0 = normal_matrix(4, p, &mut rng);
        let t = random_transform(&d, &x0, &mut rng)?;
        // Weights that produce non-finite predictions fail the check.
        let (base, moved) = match (params.predict_many(&d, &x0), params.predict_many(&t.dataset, &t.x0)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(Error::NonFinite(_)), _) | (_, Err(Error::NonFinite(_))) => return Ok(f64::INFINITY),
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        if base.iter().chain(&moved).any(|v| !v.is_finite()) {
            return Ok(f64::INFINITY);
        }
        let want: Vec<f64> = base.iter().map(|v| t.shift + t.scale * v).collect();
        worst = worst.max(rel_dev(&moved, &want));
    }
    Ok(worst)
}

fn permute_axis(t: &Tensor, axis: usize, perm: &[usize]) -> Tensor {
    let shape = t.shape().to_vec();
    let inner: usize = shape[axis + 1..].iter().product();
    let ext = shape[axis];
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; t.numel()];
    for o in 0..outer {
        for (i, &src) in perm.iter().enumerate() {
            let dst = (o * ext + i) * inner;
            let from = (o * ext + src) * inner;
            out[dst..dst + inner].copy_from_slice(&t.data()[from..from + inner]);
        }
    }
    Tensor::new(shape, out).expect("same shape")
}

/// Exchangeable layer (rows and columns), deep-set layer and batched
/// deep-set layer: `layer(perm v) = perm layer(v)`.
pub fn layer_equivariance(cases: usize, seed: u64) -> Result<[f64; 3]> {
    let mut worst = [0.0f64; 3];
    for c in 0..cases {
        let mut rng = substream(seed, &[2, c as u64]);
        let (n, p, m) = (rng.random_range(2..8), rng.random_range(2..6), rng.random_range(2..5));
        let (k, o) = (rng.random_range(1..4), rng.random_range(1..4));
        let tape = Tape::new();
        let mut cst = |shape: &[usize]| tape.constant(normal_tensor(shape, &mut rng));
        let ex = ExchangeableWeights {
            w_id: cst(&[k, o]),
            w_row: cst(&[k, o]),
            w_col: cst(&[k, o]),
            w_all: cst(&[k, o]),
            bias: cst(&[o]),
        };
        let ds = DeepSetWeights {
            lambda: cst(&[k, o]),
            gamma: cst(&[k, o]),
            bias: cst(&[o]),
        };
        let (rp, cp, mp) = (permutation(n, &mut rng), permutation(p, &mut rng), permutation(m, &mut rng));

        let v = normal_tensor(&[n, p, k], &mut rng);
        let both = |t: &Tensor| permute_axis(&permute_axis(t, 0, &rp), 1, &cp);
        let out = exchangeable_matrix_layer(tape.constant(v.clone()), &ex)?.value();
        let out_p = exchangeable_matrix_layer(tape.constant(both(&v)), &ex)?.value();
        worst[0] = worst[0].max(rel_dev(out_p.data(), both(&out).data()));

        let v = normal_tensor(&[p, k], &mut rng);
        let out = deep_set_layer(tape.constant(v.clone()), &ds)?.value();
        let out_p = deep_set_layer(tape.constant(permute_axis(&v, 0, &cp)), &ds)?.value();
        worst[1] = worst[1].max(rel_dev(out_p.data(), permute_axis(&out, 0, &cp).data()));

        let v = normal_tensor(&[m, p, k], &mut rng);
        let both = |t: &Tensor| permute_axis(&permute_axis(t, 0, &mp), 1, &cp);
        let out = deep_set_layer(tape.constant(v.clone()), &ds)?.value();
        let out_p = deep_set_layer(tape.constant(both(&v)), &ds)?.value();
        worst[2] = worst[2].max(rel_dev(out_p.data(), both(&out).data()));
    }
    Ok(worst)
}

/// Finite-difference check of the full network on a toy problem (n=5,
/// p=3, widths 6, depth 2). Seeds whose base point sits within `1e-4` of
/// an activation kink are skipped.
pub fn network_gradient(seed: u64) -> Result<f64> {
    let config = ArchitectureConfig::uniform(6, 2, 6, 6, 6);
    for attempt in 0..50u64 {
        let mut rng = substream(seed, &[3, attempt]);
        let params = EstimatorParams::init(config, rng.random())?;
        let x = tensor_from_matrix(&normal_matrix(5, 3, &mut rng));
        let y = normal_tensor(&[5], &mut rng);
        let x0 = tensor_from_matrix(&normal_matrix(4, 3, &mut rng));
        let weights = normal_tensor(&[4], &mut rng);
        let mut tensors: Vec<Tensor> = crate::net::Parameterized::named_params(&params)
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        tensors.push(y);
        let report = check_gradients(&tensors, 1e-6, 1e-9, |tape, vars| {
            let (ws, yv) = vars.split_at(vars.len() - 1);
            let w = NetWeights::assemble(&config, ws.iter().copied())?;
            let pred: Var<'_> = forward(&config, &w, &x, yv[0], &x0)?;
            pred.mul(&tape.constant(weights.clone()))?.sum().add(&pred.square().sum())
        })?;
        if report.kink_margin >= 1e-4 {
            return Ok(report.max_rel_error);
        }
    }
    Err(Error::Convergence("no kink-free base point found for gradient check".into()))
}

/// Largest relative error of `reconstruct(standardize(d, x0))`.
pub fn standardization_round_trip(cases: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for c in 0..cases {
        let mut rng = substream(seed, &[4, c as u64]);
        let (n, p) = (rng.random_range(2..20), rng.random_range(1..8));
        let loc: f64 = rng.random_range(-100.0..100.0);
        let x = normal_matrix(n, p, &mut rng).map(|v| loc + 7.0 * v);
        let y = DVector::from_fn(n, |_, _| loc + rng.sample::<f64, _>(StandardNormal));
        let x0 = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = Dataset::new(x.clone(), y.clone())?;
        let (xr, yr, x0r) = standardize(&d, &x0)?.reconstruct();
        worst = worst
            .max(rel_dev(xr.as_slice(), x.as_slice()))
            .max(rel_dev(yr.as_slice(), y.as_slice()))
            .max(rel_dev(x0r.as_slice(), x0.as_slice()));
    }
    Ok(worst)
}

/// Correlation matrices, sparsity and norm of generator draws, reported as
/// the worst violation (0 when every draw satisfies the constraint).
pub fn prior_constraints(samples: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let p = 10;
    let mut out = Vec::new();
    for (setting, s) in [(Setting::SparseLinear, 1), (Setting::SparseLinear, 5), (Setting::Flam, 4)] {
        let g = PriorGeneratorParams::init(PriorConfig::new(setting, s, p), seed)?;
        let (mut diag, mut pd, mut sparse, mut norm) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..samples {
            let mut rng = substream(seed, &[5, s as u64, i as u64]);
            let d = g.draw_fixed(&mut rng)?;
            for j in 0..p {
                diag = diag.max((d.sigma[(j, j)] - 1.0).abs());
            }
            if d.sigma.clone().cholesky().is_none() {
                pd = 1.0;
            }
            match &d.mu {
                Regression::Linear { beta } => {
                    let nz = beta.data().iter().filter(|v| **v != 0.0).count();
                    sparse = sparse.max(nz.saturating_sub(s) as f64);
                    let l1: f64 = beta.data().iter().map(|v| v.abs()).sum();
                    norm = norm.max(l1 - 5.0);
                }
                Regression::Steps { .. } => {
                    let tv = d.mu.component_variations();
                    let active = tv.iter().filter(|(_, v)| *v > 0.0).count();
                    sparse = sparse.max(active.saturating_sub(s) as f64);
                    let total: f64 = tv.iter().map(|(_, v)| v).sum();
                    norm = norm.max((total - 10.0).abs());
                }
                _ => return Err(Error::invalid("generator returned an unexpected regression")),
            }
        }
        let tag = format!("prior {setting} s={s}");
        out.push(CheckOutcome { name: format!("{tag}: |diag(sigma) - 1|"), cases: samples, max_deviation: diag, tolerance: 1e-12 });
        out.push(CheckOutcome { name: format!("{tag}: sigma not positive definite"), cases: samples, max_deviation: pd, tolerance: 0.0 });
        out.push(CheckOutcome { name: format!("{tag}: active components above s"), cases: samples, max_deviation: sparse, tolerance: 0.0 });
        let (label, tol) = match setting {
            Setting::SparseLinear => ("l1 norm above 5", 1e-12),
            Setting::Flam => ("|total variation - 10|", 1e-9),
        };
        out.push(CheckOutcome { name: format!("{tag}: {label}"), cases: samples, max_deviation: norm.max(0.0), tolerance: tol });
    }
    Ok(out)
}

/// Runs every check against `params`.
pub fn run_suite(params: &EstimatorParams, cfg: &SuiteConfig) -> Result<Vec<CheckOutcome>> {
    let outcome = |name: &str, cases, dev, tol| CheckOutcome {
        name: name.to_string(),
        cases,
        max_deviation: dev,
        tolerance: tol,
    };
    let mut out = vec![outcome(
        "network equivariance",
        cfg.cases,
        network_equivariance(params, cfg.cases, cfg.seed)?,
        1e-8,
    )];
    let [m1, m2, m3] = layer_equivariance(cfg.cases, cfg.seed)?;
    out.push(outcome("exchangeable layer equivariance", cfg.cases, m1, 1e-10));
    out.push(outcome("deep-set layer equivariance", cfg.cases, m2, 1e-10));
    out.push(outcome("batched deep-set layer equivariance", cfg.cases, m3, 1e-10));
    out.push(outcome("network gradient", 1, network_gradient(cfg.seed)?, 1e-5));
    out.push(outcome(
        "standardization round trip",
        cfg.cases,
        standardization_round_trip(cfg.cases, cfg.seed)?,
        1e-10,
    ));
    out.extend(prior_constraints(cfg.prior_samples, cfg.seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_fresh_weights() {
        let params = EstimatorParams::init(ArchitectureConfig::uniform(8, 2, 6, 6, 4), 3).unwrap();
        let cfg = SuiteConfig {
            cases: 10,
            prior_samples: 20,
            seed: 1,
        };
        for c in run_suite(&params, &cfg).unwrap() {
            assert!(c.passed(), "{c:?}");
        }
    }

    #[test]
    fn permute_axis_round_trip() {
        let mut rng = substream(0, &[0]);
        let t = normal_tensor(&[3, 2, 1], &mut rng);
        let swapped = permute_axis(&t, 0, &[1, 0, 2]);
        assert!(rel_dev(t.data(), swapped.data()) > 0.0);
        assert_eq!(permute_axis(&swapped, 0, &[1, 0, 2]), t);
    }
}
