//! Acceptance criteria. Every test prints exactly one `PASS`/`FAIL` line.
//!
//! Run with `cargo test -p amc-core --test acceptance`.

use std::time::{Duration, Instant};

use amc_core::eval::estimate_risk;
use amc_core::eval::{nnls, nnls_stack, Estimator, LassoCv, MeanEstimator, Ols};
use amc_core::eval::RiskConfig;
use amc_core::net::{symmetrize, Parameterized};
use amc_core::priors::{
    sample_feature_prior, EvaluationPrior, FeatureLaw, FeaturePriorConfig, PriorConfig, Regression,
    SampledDistribution, Variant,
};
use amc_core::rng::{from_seed, Rng};
use amc_core::trainer::{BatchKey, MixturePrior, Phase, Player, Trainer};
use amc_core::{
    ArchitectureConfig, Dataset, EstimatorParams, PriorGeneratorParams, Setting, Tape, Tensor, TrainConfig, Var,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

/// Bands the implementation cannot meet; they print FAIL but do not abort
/// the run. Each entry is analysed in the decisions ledger.
const KNOWN_UNATTAINABLE: &[&str] = &["3/ols-n500"];

/// Written to the raw stderr handle so the line shows up even when the
/// test harness captures output.
fn report(id: u32, title: &str, pass: bool, detail: &str, elapsed: Duration) {
    use std::io::Write;
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("{tag} criterion {id}: {title} [{detail}; {:.1}s]\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn normal_matrix(r: usize, c: usize, rng: &mut Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

fn normal_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let k = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..k).map(|_| normal(rng)).collect()).unwrap()
}

fn max_rel(got: &[f64], want: &[f64], floor: f64) -> f64 {
    got.iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs() / b.abs().max(floor))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- 1

fn permutation(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

fn log_uniform(lo: f64, hi: f64, rng: &mut Rng) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Deviations for the feature-side and the outcome-side identities.
fn equivariance_case(seed: u64, n: usize, p: usize) -> (f64, f64) {
    let mut rng = from_seed(seed);
    let params = EstimatorParams::init(ArchitectureConfig::default(), rng.random()).unwrap();
    let x = normal_matrix(n, p, &mut rng);
    let y = DVector::from_fn(n, |_, _| 3.0 * normal(&mut rng));
    let x0 = normal_matrix(4, p, &mut rng);
    let d = Dataset::new(x.clone(), y.clone()).unwrap();
    let base = params.predict_many(&d, &x0).unwrap();

    // Rows permuted, columns permuted, each column shifted and rescaled.
    let rows = permutation(n, &mut rng);
    let cols = permutation(p, &mut rng);
    let shift: Vec<f64> = (0..p).map(|_| 10.0 * (2.0 * rng.random::<f64>() - 1.0)).collect();
    let scale: Vec<f64> = (0..p).map(|_| log_uniform(0.1, 10.0, &mut rng)).collect();
    let feat = |m: &DMatrix<f64>, i: usize, j: usize| shift[j] + scale[j] * m[(i, cols[j])];
    let x2 = DMatrix::from_fn(n, p, |i, j| feat(&x, rows[i], j));
    let y2 = DVector::from_fn(n, |i, _| y[rows[i]]);
    let x02 = DMatrix::from_fn(4, p, |i, j| feat(&x0, i, j));
    let moved = params.predict_many(&Dataset::new(x2, y2).unwrap(), &x02).unwrap();
    let dev_features = max_rel(&moved, &base, 1.0);

    // Outcome shift and positive rescaling.
    let a = 10.0 * (2.0 * rng.random::<f64>() - 1.0);
    let b = log_uniform(0.1, 10.0, &mut rng);
    let ys = y.map(|v| a + b * v);
    let got = params.predict_many(&Dataset::new(x, ys).unwrap(), &x0).unwrap();
    let want: Vec<f64> = base.iter().map(|t| a + b * t).collect();
    let dev_outcome = max_rel(&got, &want, b.max(1.0));
    (dev_features, dev_outcome)
}

#[test]
fn criterion_1_equivariance() {
    let start = Instant::now();
    let worst = std::sync::Mutex::new((0.0f64, 0.0f64));
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 100,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let outcome = runner.run(&(any::<u64>(), 3usize..=12, 1usize..=6), |(seed, n, p)| {
        let (f, o) = equivariance_case(seed, n, p);
        {
            let mut w = worst.lock().unwrap();
            w.0 = w.0.max(f);
            w.1 = w.1.max(o);
        }
        prop_assert!(f <= 1e-8, "feature-side deviation {f:e} at n={n}, p={p}");
        prop_assert!(o <= 1e-8, "outcome-side deviation {o:e} at n={n}, p={p}");
        Ok(())
    });
    let (f, o) = *worst.lock().unwrap();
    let elapsed = start.elapsed();
    let pass = outcome.is_ok() && elapsed < Duration::from_secs(60);
    report(
        1,
        "equivariance in features and outcomes",
        pass,
        &format!("100 cases, max rel dev features {f:.1e}, outcome {o:.1e}"),
        elapsed,
    );
    if let Err(e) = outcome {
        panic!("{e}");
    }
    assert!(pass);
}

// ---------------------------------------------------------------- 2

/// Relative error (max norm of the difference over max norm of the finite
/// difference gradient) between tape gradients and central differences of
/// `f`, over every input.
fn gradient_error(inputs: &[Tensor], f: &dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>) -> f64 {
    let h = 1e-6;
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&tape, &leaves);
    tape.backward(out).unwrap();
    let analytic: Vec<Tensor> = leaves.iter().map(|&v| tape.grad_or_zeros(v)).collect();

    let value_at = |inputs: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).item().unwrap()
    };
    let mut num = Vec::new();
    let mut ana = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= h;
            num.push((value_at(&plus) - value_at(&minus)) / (2.0 * h));
            ana.push(analytic[i].data()[k]);
        }
    }
    let scale = num.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    num.iter().zip(&ana).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

/// `sum(c * v)` for fixed random `c`, so every output entry matters.
fn contract<'t>(tape: &'t Tape, v: Var<'t>, seed: u64) -> Var<'t> {
    let c = normal_tensor(&v.shape(), &mut from_seed(seed));
    v.mul(&tape.constant(c)).unwrap().sum()
}

/// Entries with |v| in [0.3, 2] and random sign.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    let k = shape.iter().product();
    let data = (0..k)
        .map(|_| {
            let m = rng.random_range(0.3..2.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type Scalar = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>>;
type Primitive = (&'static str, Vec<Tensor>, Scalar);

fn primitives() -> Vec<Primitive> {
    let mut rng = from_seed(21);
    let r = &mut rng;
    let s34 = [3, 4];
    let s234 = [2, 3, 4];
    let positive = Tensor::new(vec![3, 4], (0..12).map(|_| r.random_range(0.5..3.0)).collect()).unwrap();
    vec![
        ("add", vec![normal_tensor(&s34, r), normal_tensor(&s34, r)], Box::new(|t, v| contract(t, v[0].add(&v[1]).unwrap(), 1))),
        ("sub", vec![normal_tensor(&s34, r), normal_tensor(&s34, r)], Box::new(|t, v| contract(t, v[0].sub(&v[1]).unwrap(), 2))),
        ("mul", vec![normal_tensor(&s34, r), normal_tensor(&s34, r)], Box::new(|t, v| contract(t, v[0].mul(&v[1]).unwrap(), 3))),
        ("div", vec![normal_tensor(&s34, r), away_from_zero(&s34, r)], Box::new(|t, v| contract(t, v[0].div(&v[1]).unwrap(), 4))),
        ("scale", vec![normal_tensor(&s34, r)], Box::new(|t, v| contract(t, v[0].scale(-1.7), 5))),
        ("neg", vec![normal_tensor(&s34, r)], Box::new(|t, v| contract(t, v[0].neg(), 6))),
        ("add_scalar", vec![normal_tensor(&s34, r)], Box::new(|t, v| contract(t, v[0].add_scalar(2.5), 7))),
        ("matmul", vec![normal_tensor(&[3, 5], r), normal_tensor(&[5, 2], r)], Box::new(|t, v| contract(t, v[0].matmul(&v[1]).unwrap(), 8))),
        ("sum", vec![normal_tensor(&s234, r)], Box::new(|_, v| v[0].sum().scale(1.3))),
        ("mean", vec![normal_tensor(&s234, r)], Box::new(|_, v| v[0].mean().scale(-0.7))),
        ("mean_axis 0", vec![normal_tensor(&s234, r)], Box::new(|t, v| contract(t, v[0].mean_axis(0).unwrap(), 9))),
        ("mean_axis 1", vec![normal_tensor(&s234, r)], Box::new(|t, v| contract(t, v[0].mean_axis(1).unwrap(), 10))),
        ("mean_axis 2", vec![normal_tensor(&s234, r)], Box::new(|t, v| contract(t, v[0].mean_axis(2).unwrap(), 11))),
        ("sum_axis 1", vec![normal_tensor(&s234, r)], Box::new(|t, v| contract(t, v[0].sum_axis(1).unwrap(), 12))),
        ("broadcast_axis", vec![normal_tensor(&[2, 1, 4], r)], Box::new(|t, v| contract(t, v[0].broadcast_axis(1, 3).unwrap(), 13))),
        ("expand", vec![normal_tensor(&[1], r)], Box::new(|t, v| contract(t, v[0].expand(&[3, 2]).unwrap(), 14))),
        ("reshape", vec![normal_tensor(&s234, r)], Box::new(|t, v| contract(t, v[0].reshape(&[6, 4]).unwrap(), 15))),
        ("exp", vec![normal_tensor(&s34, r)], Box::new(|t, v| contract(t, v[0].exp(), 16))),
        ("abs", vec![away_from_zero(&s34, r)], Box::new(|t, v| contract(t, v[0].abs(), 17))),
        ("leaky_relu", vec![away_from_zero(&s34, r)], Box::new(|t, v| contract(t, v[0].leaky_relu(), 18))),
        ("square", vec![normal_tensor(&s34, r)], Box::new(|t, v| contract(t, v[0].square(), 19))),
        ("sqrt", vec![positive], Box::new(|t, v| contract(t, v[0].sqrt(), 20))),
        (
            "concat axis 0",
            vec![normal_tensor(&[1, 3, 2], r), normal_tensor(&[2, 3, 2], r)],
            Box::new(|t, v| contract(t, t.concat(&v[..2], 0).unwrap(), 22)),
        ),
        (
            "concat axis 2",
            vec![normal_tensor(&[2, 3, 1], r), normal_tensor(&[2, 3, 2], r)],
            Box::new(|t, v| contract(t, t.concat(&v[..2], 2).unwrap(), 23)),
        ),
    ]
}

/// Network inputs that keep every activation at least `margin` from the
/// kink; returns the weights, outcomes and the other data.
fn smooth_network_case(arch: ArchitectureConfig) -> (EstimatorParams, Tensor, Tensor, Tensor) {
    for seed in 0.. {
        let mut rng = from_seed(1000 + seed);
        let params = EstimatorParams::init(arch, rng.random()).unwrap();
        let x = normal_tensor(&[5, 3], &mut rng);
        let y = normal_tensor(&[5], &mut rng);
        let x0 = normal_tensor(&[4, 3], &mut rng);
        let tape = Tape::new();
        let w = params.bind(&tape, false).unwrap();
        amc_core::net::forward(&arch, &w, &x, tape.constant(y.clone()), &x0).unwrap();
        if tape.kink_margin() > 1e-4 {
            return (params, x, y, x0);
        }
    }
    unreachable!()
}

#[test]
fn criterion_2_gradients() {
    let start = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    let mut failures = Vec::new();
    for (name, inputs, f) in primitives() {
        let e = gradient_error(&inputs, f.as_ref());
        if e > worst.1 {
            worst = (name.to_string(), e);
        }
        if e > 1e-5 {
            failures.push(format!("{name}: {e:.1e}"));
        }
    }

    let arch = ArchitectureConfig::uniform(6, 2, 6, 6, 6);
    let (params, x, y, x0) = smooth_network_case(arch);
    let mut inputs: Vec<Tensor> = params.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    inputs.push(y);
    let k = inputs.len();
    let net: Scalar = Box::new(move |tape, v| {
        let w = amc_core::net::NetWeights::assemble(&arch, v[..k - 1].iter().copied()).unwrap();
        let out = amc_core::net::forward(&arch, &w, &x, v[k - 1], &x0).unwrap();
        contract(tape, out, 24)
    });
    let e_net = gradient_error(&inputs, net.as_ref());
    if e_net > 1e-5 {
        failures.push(format!("network: {e_net:.1e}"));
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(
        2,
        "tape gradients against central differences",
        pass,
        &format!(
            "24 primitive checks, worst {} {:.1e}; network ({} weights + outcomes) {:.1e}",
            worst.0,
            worst.1,
            params.num_parameters(),
            e_net
        ),
        elapsed,
    );
    assert!(pass, "{failures:?}");
}

// ---------------------------------------------------------------- 3

/// Risk of OLS with an intercept against the noiseless regression function
/// for Gaussian features: `(1 + 1/n) p / (n - p - 2) + 1/n`.
fn ols_risk_closed_form(n: f64, p: f64) -> f64 {
    (1.0 + 1.0 / n) * p / (n - p - 2.0) + 1.0 / n
}

#[test]
fn criterion_3_baselines() {
    let start = Instant::now();
    let prior = EvaluationPrior::new(Setting::SparseLinear, 1, 10, Variant::Boundary).unwrap();
    let cfg = |n| RiskConfig {
        n,
        n_eval: 100,
        reps: 5000,
        seed: 0,
    };
    let bands = [("3/ols-n100", 0.12, 0.005), ("3/ols-n500", 0.02, 0.002), ("3/lasso-n100", 0.06, 0.01)];
    let ols100 = estimate_risk(&Ols, &prior, cfg(100)).unwrap();
    let ols500 = estimate_risk(&Ols, &prior, cfg(500)).unwrap();
    let lasso = estimate_risk(&LassoCv::default(), &prior, cfg(100)).unwrap();
    let results = [&ols100, &ols500, &lasso];

    let mut parts = Vec::new();
    let mut pass = true;
    let mut unexpected = Vec::new();
    for ((key, target, tol), r) in bands.iter().zip(results) {
        let ok = (r.mean - target).abs() <= *tol;
        parts.push(format!("{key} {:.4} (se {:.4}, band {target}±{tol})", r.mean, r.std_error));
        if !ok {
            pass = false;
            if !KNOWN_UNATTAINABLE.contains(key) {
                unexpected.push(*key);
            }
        }
    }
    // The Monte Carlo estimates themselves must agree with the closed form.
    let mut oracle = Vec::new();
    for (n, r) in [(100.0, &ols100), (500.0, &ols500)] {
        let exact = ols_risk_closed_form(n, 10.0);
        let z = (r.mean - exact) / r.std_error;
        parts.push(format!("closed form n={n}: {exact:.4}, z={z:.2}"));
        if z.abs() > 3.0 {
            oracle.push(n);
        }
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    report(3, "OLS and lasso risk bands", pass, &parts.join("; "), elapsed);
    assert!(oracle.is_empty(), "OLS risk disagrees with the closed form at n = {oracle:?}");
    assert!(unexpected.is_empty(), "bands missed: {unexpected:?}");
}

// ---------------------------------------------------------------- 4

/// Total variation of `x -> sum_k jumps[k] 1{x >= knots[k]}`: sort the
/// knots, walk the cumulative sums from zero and add absolute changes.
fn step_tv(knots: &[f64], jumps: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..knots.len()).collect();
    order.sort_by(|&a, &b| knots[a].total_cmp(&knots[b]));
    let mut tv = 0.0;
    let mut level = 0.0;
    let mut k = 0;
    while k < order.len() {
        // Coincident knots form a single jump.
        let mut next = level;
        let at = knots[order[k]];
        while k < order.len() && knots[order[k]] == at {
            next += jumps[order[k]];
            k += 1;
        }
        tv += (next - level).abs();
        level = next;
    }
    tv
}

fn column(t: &Tensor, j: usize) -> Vec<f64> {
    let s = t.shape()[1];
    t.data().iter().skip(j).step_by(s).copied().collect()
}

#[test]
fn criterion_4_prior_constraints() {
    let start = Instant::now();
    let samples = 10_000;
    let p = 10;
    let mut failures = Vec::new();
    let mut rng = from_seed(4);

    let mut diag_dev = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for _ in 0..samples {
        let (sigma, _) = sample_feature_prior(&FeaturePriorConfig::new(p), &mut rng).unwrap();
        for i in 0..p {
            diag_dev = diag_dev.max((sigma[(i, i)] - 1.0).abs());
        }
        let eig = sigma.symmetric_eigenvalues().min();
        min_eig = min_eig.min(eig);
    }
    if diag_dev > 1e-12 || min_eig <= 0.0 {
        failures.push(format!("sigma: diag dev {diag_dev:e}, min eigenvalue {min_eig:e}"));
    }

    let mut worst_l1 = 0.0f64;
    for s in [1usize, 5] {
        let cfg = PriorConfig::new(Setting::SparseLinear, s, p);
        for chunk in 0..10u64 {
            let prior = PriorGeneratorParams::init(cfg, 40 + chunk).unwrap();
            for _ in 0..samples / 10 {
                let dist = prior.draw_fixed(&mut rng).unwrap();
                let Regression::Linear { beta } = &dist.mu else {
                    failures.push("linear prior drew a non-linear function".into());
                    break;
                };
                let b = beta.data();
                let nnz = b.iter().filter(|v| **v != 0.0).count();
                let l1: f64 = b.iter().map(|v| v.abs()).sum();
                let signed: f64 = b.iter().sum();
                worst_l1 = worst_l1.max((l1 - signed.abs()).abs());
                if nnz > s || l1 > 5.0 + 1e-12 || (l1 - signed.abs()).abs() > 1e-12 {
                    failures.push(format!("linear s={s}: nnz {nnz}, l1 {l1}, |sum| {}", signed.abs()));
                }
            }
        }
    }

    let mut worst_tv = 0.0f64;
    for s in [1usize, 4] {
        let mut cfg = PriorConfig::new(Setting::Flam, s, p);
        cfg.knots = 500;
        for chunk in 0..10u64 {
            let prior = PriorGeneratorParams::init(cfg, 80 + chunk).unwrap();
            for _ in 0..samples / 10 {
                let dist = prior.draw_fixed(&mut rng).unwrap();
                let Regression::Steps { knots, jumps } = &dist.mu else {
                    failures.push("flam prior drew a non-step function".into());
                    break;
                };
                let tvs: Vec<f64> = (0..jumps.shape()[1]).map(|j| step_tv(&column(knots, j), &column(jumps, j))).collect();
                let total: f64 = tvs.iter().sum();
                let active = tvs.iter().filter(|v| **v > 0.0).count();
                worst_tv = worst_tv.max((total - 10.0).abs());
                if (total - 10.0).abs() > 1e-9 || active > s {
                    failures.push(format!("flam s={s}: total variation {total}, {active} active"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(120);
    report(
        4,
        "prior constraints over 10^4 draws each",
        pass,
        &format!(
            "sigma diag dev {diag_dev:.1e}, min eigenvalue {min_eig:.2e}; linear | |b|_1 - |sum b| | <= {worst_l1:.1e}; flam |TV - 10| <= {worst_tv:.1e}"
        ),
        elapsed,
    );
    failures.truncate(5);
    assert!(pass, "{failures:?}");
}

// ---------------------------------------------------------------- 5

/// Correlation of the inverse of `sum_{k<20} z_k z_k^T`, `z_k ~ N(0, 2 I)`.
fn outer_product_sigma12(rng: &mut rand::rngs::StdRng) -> f64 {
    let p = 3;
    let mut w = DMatrix::<f64>::zeros(p, p);
    for _ in 0..20 {
        let z = DVector::from_fn(p, |_, _| 2f64.sqrt() * rng.sample::<f64, _>(StandardNormal));
        w += &z * z.transpose();
    }
    let inv = w.try_inverse().unwrap();
    inv[(0, 1)] / (inv[(0, 0)] * inv[(1, 1)]).sqrt()
}

fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn criterion_5_wishart_law() {
    use rand::SeedableRng;
    let start = Instant::now();
    let draws = 10_000;
    let mut rng = from_seed(5);
    let ours: Vec<f64> = (0..draws)
        .map(|_| sample_feature_prior(&FeaturePriorConfig::new(3), &mut rng).unwrap().0[(0, 1)])
        .collect();
    let mut oracle_rng = rand::rngs::StdRng::seed_from_u64(55);
    let oracle: Vec<f64> = (0..draws).map(|_| outer_product_sigma12(&mut oracle_rng)).collect();
    let d = ks_two_sample(ours, oracle);
    let elapsed = start.elapsed();
    let pass = d <= 0.03;
    report(
        5,
        "law of sigma_12 against the outer-product construction",
        pass,
        &format!("p=3, {draws} draws each, KS distance {d:.4}"),
        elapsed,
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 6

fn toy_arch() -> ArchitectureConfig {
    ArchitectureConfig::uniform(8, 1, 8, 8, 8)
}

fn window_means(v: &[f64], w: usize) -> Vec<f64> {
    v.chunks_exact(w).map(|c| c.iter().sum::<f64>() / w as f64).collect()
}

fn set_params<T: Parameterized>(target: &mut T, values: &[Tensor]) {
    for ((_, t), v) in target.named_params_mut().into_iter().zip(values) {
        *t = v.clone();
    }
}

fn shifted(base: &[Tensor], dir: &[Tensor], eps: f64) -> Vec<Tensor> {
    base.iter()
        .zip(dir)
        .map(|(b, d)| {
            let mut out = b.clone();
            out.add_assign(&d.scaled(eps)).unwrap();
            out
        })
        .collect()
}

fn dot(a: &[Tensor], b: &[Tensor]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.data().iter().zip(y.data()).map(|(u, v)| u * v).sum::<f64>())
        .sum()
}

fn values<T: Parameterized>(p: &T) -> Vec<Tensor> {
    p.named_params().into_iter().map(|(_, t)| t.clone()).collect()
}

/// (a) fixed prior: windowed loss decreases.
fn dynamics_fixed_prior() -> (bool, String) {
    let mut cfg = TrainConfig::for_setting(Setting::SparseLinear, 1, 20);
    cfg.iterations = 2000;
    cfg.pretrain_iterations = 0;
    cfg.batch_datasets = 16;
    cfg.eval_points = 50;
    cfg.estimator_adam.base_rate = 1e-3;
    cfg.prior_adam.base_rate = 0.0;
    cfg.seed = 6;
    let prior = PriorGeneratorParams::init(PriorConfig::new(Setting::SparseLinear, 1, 2), 61).unwrap();
    let mut t = Trainer::new(cfg, EstimatorParams::init(toy_arch(), 62).unwrap(), prior.clone()).unwrap();
    t.run().unwrap();
    let losses = t.log.est_losses();
    let first = window_means(&losses[..200], 200)[0];
    let last = window_means(&losses[1800..], 200)[0];
    let frozen = t.prior == prior;
    (
        last < first && frozen,
        format!("(a) loss first 10% {first:.4} -> last 10% {last:.4}, prior unchanged {frozen}"),
    )
}

/// (b) two-component mixture under the sample-mean estimator.
fn dynamics_mixture() -> (bool, String) {
    let (n, p) = (20usize, 2usize);
    let beta = vec![2.0, 0.0];
    let component = |mu| SampledDistribution {
        sigma: DMatrix::identity(p, p),
        sigma_chol: DMatrix::identity(p, p),
        mu,
        perm: (0..p).collect(),
        features: FeatureLaw::Gaussian,
        noise_sd: 1.0,
    };
    // Exact Bayes risks of the sample mean: 1/n without signal,
    // |beta|^2 (1 + 1/n) + 1/n with it.
    let nf = n as f64;
    let risk_a = 1.0 / nf;
    let risk_b = beta.iter().map(|b| b * b).sum::<f64>() * (1.0 + 1.0 / nf) + 1.0 / nf;
    let mixture = MixturePrior::new(vec![
        component(Regression::Zero),
        component(Regression::Linear {
            beta: Tensor::vector(beta.clone()),
        }),
    ])
    .unwrap();

    let mut cfg = TrainConfig::for_setting(Setting::SparseLinear, 1, n);
    cfg.iterations = 500;
    cfg.pretrain_iterations = 0;
    cfg.batch_datasets = 20;
    cfg.eval_points = 20;
    cfg.prior_adam.base_rate = 0.05;
    cfg.seed = 7;
    let mut t = Trainer::new(cfg, MeanEstimator, mixture).unwrap();
    let mut weight_b = Vec::new();
    t.run_with(|t| {
        weight_b.push(t.prior.weights()[1]);
        Ok(())
    })
    .unwrap();
    let windows = window_means(&weight_b, 50);
    let monotone = windows.windows(2).all(|w| w[1] > w[0]);
    (
        monotone && risk_b > risk_a,
        format!(
            "(b) exact risks {risk_a:.3} vs {risk_b:.3}, weight on the riskier component {:.3} -> {:.3} over {} windows",
            windows[0],
            windows[windows.len() - 1],
            windows.len()
        ),
    )
}

/// (c) directional derivatives with all randomness frozen.
fn dynamics_signs() -> (bool, String) {
    let mut cfg = TrainConfig::for_setting(Setting::Flam, 2, 20);
    cfg.iterations = 1;
    cfg.batch_datasets = 16;
    cfg.eval_points = 30;
    cfg.estimator_adam.base_rate = 1e-4;
    cfg.prior_adam.base_rate = 1e-4;
    cfg.seed = 8;
    let est0 = EstimatorParams::init(toy_arch(), 81).unwrap();
    let prior0 = PriorGeneratorParams::init(PriorConfig::new(Setting::Flam, 2, 3), 82).unwrap();
    let est_key = BatchKey {
        phase: Phase::Adversarial,
        iteration: 0,
        sub_step: 0,
    };
    let prior_key = BatchKey { sub_step: 1, ..est_key };
    let loss = |e: &EstimatorParams, g: &PriorGeneratorParams, key: BatchKey, who: Player| {
        Trainer::new(cfg, e.clone(), g.clone()).unwrap().evaluate_batch(key, who).unwrap()
    };

    // Estimator: derivative along -grad is negative and matches -|grad|^2.
    let eps = 1e-6;
    let at = loss(&est0, &prior0, est_key, Player::Estimator);
    let dir: Vec<Tensor> = at.grads.iter().map(|g| g.scaled(-1.0)).collect();
    let base = values(&est0);
    let mut plus = est0.clone();
    set_params(&mut plus, &shifted(&base, &dir, eps));
    let mut minus = est0.clone();
    set_params(&mut minus, &shifted(&base, &dir, -eps));
    let fd_est = (loss(&plus, &prior0, est_key, Player::Estimator).loss
        - loss(&minus, &prior0, est_key, Player::Estimator).loss)
        / (2.0 * eps);
    let exact_est = dot(&at.grads, &dir);

    // One real step of each player, then the loss on that player's batch.
    let mut t = Trainer::new(cfg, est0.clone(), prior0.clone()).unwrap();
    t.adversarial_step().unwrap();
    let est1 = t.estimator.clone();
    let prior1 = t.prior.clone();
    let est_before = at.loss;
    let est_after = loss(&est1, &prior0, est_key, Player::Estimator).loss;

    // Prior: derivative along +grad is positive, at the updated estimator.
    let at_g = loss(&est1, &prior0, prior_key, Player::Prior);
    let gbase = values(&prior0);
    let mut gplus = prior0.clone();
    set_params(&mut gplus, &shifted(&gbase, &at_g.grads, eps));
    let mut gminus = prior0.clone();
    set_params(&mut gminus, &shifted(&gbase, &at_g.grads, -eps));
    let fd_prior = (loss(&est1, &gplus, prior_key, Player::Prior).loss
        - loss(&est1, &gminus, prior_key, Player::Prior).loss)
        / (2.0 * eps);
    let exact_prior = dot(&at_g.grads, &at_g.grads);
    let prior_before = at_g.loss;
    let prior_after = loss(&est1, &prior1, prior_key, Player::Prior).loss;

    let close = |fd: f64, exact: f64| (fd - exact).abs() <= 1e-4 * exact.abs();
    let pass = fd_est < 0.0
        && fd_prior > 0.0
        && close(fd_est, exact_est)
        && close(fd_prior, exact_prior)
        && est_after < est_before
        && prior_after > prior_before;
    (
        pass,
        format!(
            "(c) estimator slope {fd_est:.3e} (tape {exact_est:.3e}), step {est_before:.6} -> {est_after:.6}; prior slope {fd_prior:.3e} (tape {exact_prior:.3e}), step {prior_before:.6} -> {prior_after:.6}"
        ),
    )
}

#[test]
fn criterion_6_training_dynamics() {
    let start = Instant::now();
    let parts = [dynamics_fixed_prior(), dynamics_mixture(), dynamics_signs()];
    let elapsed = start.elapsed();
    let pass = parts.iter().all(|p| p.0) && elapsed < Duration::from_secs(600);
    let detail: Vec<&str> = parts.iter().map(|p| p.1.as_str()).collect();
    report(6, "descent-ascent dynamics at toy scale", pass, &detail.join("; "), elapsed);
    assert!(pass);
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_symmetrization() {
    let start = Instant::now();
    // A briefly trained network, so that predictions depend on the data.
    let mut cfg = TrainConfig::for_setting(Setting::SparseLinear, 1, 50);
    cfg.iterations = 0;
    cfg.pretrain_iterations = 300;
    cfg.batch_datasets = 16;
    cfg.eval_points = 50;
    cfg.estimator_adam.base_rate = 2e-3;
    let prior = PriorGeneratorParams::init(PriorConfig::new(Setting::SparseLinear, 1, 10), 70).unwrap();
    let init = EstimatorParams::init(ArchitectureConfig::uniform(16, 2, 8, 8, 8), 71).unwrap();
    let mut trainer = Trainer::new(cfg, init, prior).unwrap();
    trainer.run().unwrap();
    let net = trainer.estimator;
    let mut rng = from_seed(7);
    let mut idem = 0.0f64;
    for _ in 0..20 {
        let (n, p) = (rng.random_range(3..30), rng.random_range(1..8));
        let d = Dataset::new(normal_matrix(n, p, &mut rng), DVector::from_fn(n, |_, _| normal(&mut rng))).unwrap();
        let x0 = normal_matrix(5, p, &mut rng);
        let once = symmetrize(&net).predict(&d, &x0).unwrap();
        let twice = symmetrize(symmetrize(&net)).predict(&d, &x0).unwrap();
        idem = idem.max(once.iter().zip(&twice).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    let mut parts = vec![format!("idempotence dev {idem:.1e}")];
    let mut ok = idem <= 1e-12;
    let cfg = RiskConfig {
        n: 50,
        n_eval: 50,
        reps: 2000,
        seed: 77,
    };
    for (setting, s, variant) in [
        (Setting::SparseLinear, 1, Variant::Boundary),
        (Setting::SparseLinear, 5, Variant::Interior),
        (Setting::Flam, 4, "scenario1-sparse".parse().unwrap()),
    ] {
        let prior = EvaluationPrior::new(setting, s, 10, variant).unwrap();
        let plain = estimate_risk(&net, &prior, cfg).unwrap();
        let sym = estimate_risk(&symmetrize(&net), &prior, cfg).unwrap();
        let slack = 2.0 * (plain.std_error.powi(2) + sym.std_error.powi(2)).sqrt();
        ok &= sym.mean <= plain.mean + slack;
        parts.push(format!(
            "{setting} s={s} {variant}: {:.3} vs sym {:.3} (slack {slack:.3})",
            plain.mean, sym.mean
        ));
    }
    let elapsed = start.elapsed();
    report(7, "symmetrization", ok, &parts.join("; "), elapsed);
    assert!(ok);
}

// ---------------------------------------------------------------- 8

fn monotone(kind: usize, v: f64) -> f64 {
    match kind {
        0 => v.exp(),
        1 => v * v * v + v,
        2 => 3.0 * v.atan() - 7.0,
        _ => 0.25 * v + 100.0,
    }
}

#[test]
fn criterion_8_rank_invariance() {
    let start = Instant::now();
    let mut arch = ArchitectureConfig::uniform(12, 2, 8, 8, 8);
    arch.rank_preprocess = true;
    let mut rng = from_seed(8);
    let mut mismatches = 0;
    for case in 0..50 {
        let net = EstimatorParams::init(arch, 800 + case).unwrap();
        let (n, p) = (rng.random_range(3..25), rng.random_range(1..7));
        let x = normal_matrix(n, p, &mut rng);
        let y = DVector::from_fn(n, |_, _| normal(&mut rng));
        let x0 = normal_matrix(6, p, &mut rng);
        let kinds: Vec<usize> = (0..p).map(|_| rng.random_range(0..4)).collect();
        let tx = DMatrix::from_fn(n, p, |i, j| monotone(kinds[j], x[(i, j)]));
        let tx0 = DMatrix::from_fn(6, p, |i, j| monotone(kinds[j], x0[(i, j)]));
        let a = net.predict_many(&Dataset::new(x, y.clone()).unwrap(), &x0).unwrap();
        let b = net.predict_many(&Dataset::new(tx, y).unwrap(), &tx0).unwrap();
        if a.iter().zip(&b).any(|(u, v)| u.to_bits() != v.to_bits()) {
            mismatches += 1;
        }
    }
    let pass = mismatches == 0;
    report(
        8,
        "rank preprocessing ignores monotone feature maps",
        pass,
        &format!("50 cases, {mismatches} with differing bits"),
        start.elapsed(),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

/// Projected gradient descent with step 1/L, run until the iterate stops moving.
fn projected_gradient(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let lipschitz = ata.symmetric_eigenvalues().max();
    let mut w = DVector::zeros(a.ncols());
    for _ in 0..1_000_000 {
        let next = (&w - (&ata * &w - &atb) / lipschitz).map(|v| v.max(0.0));
        let moved = (&next - &w).amax();
        w = next;
        if moved < 1e-15 {
            break;
        }
    }
    w
}

/// Predicts the known regression function.
struct Truth;

fn truth(x: &[f64]) -> f64 {
    (2.0 * x[0]).sin() + x[1] * x[1] - 0.5 * x[2]
}

impl Estimator for Truth {
    fn name(&self) -> String {
        "truth".into()
    }

    fn predict(&self, _d: &Dataset, x0: &DMatrix<f64>) -> amc_core::Result<Vec<f64>> {
        Ok(x0
            .row_iter()
            .map(|r| truth(&r.iter().copied().collect::<Vec<_>>()))
            .collect())
    }
}

#[test]
fn criterion_9_nnls_stacking() {
    let start = Instant::now();
    let mut rng = from_seed(9);
    let mut worst = 0.0f64;
    let mut negative = false;
    let mut bound_active = 0;
    for _ in 0..20 {
        let (rows, cols) = (rng.random_range(20..60), rng.random_range(2..9));
        let a = normal_matrix(rows, cols, &mut rng);
        let b = DVector::from_fn(rows, |_, _| normal(&mut rng));
        let ours = nnls(&a, &b).unwrap();
        let pg = projected_gradient(&a, &b);
        let pg_obj = (&b - &a * &pg).norm_squared();
        worst = worst.max((ours.objective - pg_obj).abs() / pg_obj.max(1.0));
        negative |= ours.weights.iter().any(|w| *w < 0.0);
        bound_active += ours.weights.iter().filter(|w| **w == 0.0).count();
    }

    let n = 200;
    let x = normal_matrix(n, 3, &mut rng);
    let y = DVector::from_fn(n, |i, _| {
        truth(&[x[(i, 0)], x[(i, 1)], x[(i, 2)]]) + 0.1 * normal(&mut rng)
    });
    let d = Dataset::new(x, y).unwrap();
    let ens = nnls_stack(&[&Ols, &MeanEstimator, &Truth], &d, 10, 90).unwrap();
    let w_truth = ens.weights[2];
    let pass = worst <= 1e-6 && !negative && w_truth >= 0.99 && ens.weights.iter().all(|w| *w >= 0.0);
    report(
        9,
        "NNLS against projected gradient, stacking weights",
        pass,
        &format!(
            "20 problems ({bound_active} weights at the bound), max objective gap {worst:.1e}; stacked weights ols {:.4}, mean {:.4}, truth {w_truth:.4}",
            ens.weights[0], ens.weights[1]
        ),
        start.elapsed(),
    );
    assert!(pass);
}
