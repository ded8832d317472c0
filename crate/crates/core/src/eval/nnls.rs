use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution {
    pub weights: DVector<f64>,
    /// `|b - A w|^2`.
    pub objective: f64,
    pub iterations: usize,
}

fn objective(a: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>) -> f64 {
    (b - a * w).norm_squared()
}

/// Unconstrained least squares on the columns in `passive`, returned as a
/// full-length vector with zeros elsewhere.
fn subset_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize]) -> Result<DVector<f64>> {
    let sub = a.select_columns(passive);
    let svd = sub.svd(true, true);
    let sol = svd.solve(b, 1e-12).map_err(|e| Error::Singular(e.to_string()))?;
    let mut full = DVector::zeros(a.ncols());
    for (k, &j) in passive.iter().enumerate() {
        full[j] = sol[k];
    }
    Ok(full)
}

/// Lawson-Hanson active set method for `min |b - A w|^2, w >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    let m = a.ncols();
    if a.nrows() != b.len() {
        return Err(Error::Shape {
            op: "nnls",
            lhs: vec![a.nrows(), m],
            rhs: vec![b.len()],
        });
    }
    let scale = (a.transpose() * b).amax().max(1.0);
    let tol = 1e-8 * scale;
    let max_iter = 3 * m.max(1);

    let mut w = DVector::zeros(m);
    let mut passive = vec![false; m];
    let mut iterations = 0;
    loop {
        let grad = a.transpose() * (b - a * &w);
        let next = (0..m)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let j = match next {
            Some(j) if grad[j] > tol => j,
            _ => break,
        };
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::Convergence(format!(
                "nnls active set exceeded {max_iter} iterations"
            )));
        }
        passive[j] = true;

        loop {
            let idx: Vec<usize> = (0..m).filter(|&k| passive[k]).collect();
            let s = subset_lstsq(a, b, &idx)?;
            if idx.iter().all(|&k| s[k] > 0.0) {
                w = s;
                break;
            }
            // Step from w toward s until the first passive weight hits zero.
            let alpha = idx
                .iter()
                .filter(|&&k| s[k] <= 0.0)
                .map(|&k| w[k] / (w[k] - s[k]))
                .fold(f64::INFINITY, f64::min);
            for &k in &idx {
                w[k] += alpha * (s[k] - w[k]);
            }
            let floor = 1e-12 * w.amax();
            for &k in &idx {
                if w[k] <= floor {
                    w[k] = 0.0;
                    passive[k] = false;
                }
            }
            if idx.iter().all(|&k| passive[k]) {
                // Numerical corner: no weight reached zero; drop the most negative.
                let worst = idx
                    .iter()
                    .copied()
                    .min_by(|&x, &y| s[x].total_cmp(&s[y]))
                    .expect("non-empty passive set");
                w[worst] = 0.0;
                passive[worst] = false;
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    let objective = objective(a, b, &w);
    Ok(NnlsSolution {
        weights: w,
        objective,
        iterations,
    })
}

/// Projected gradient descent with step `1 / |A|_2^2`, run until the
/// projected step stalls. Slow but independent of the active set logic.
pub fn projected_gradient_nnls(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize) -> NnlsSolution {
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let lipschitz = ata.symmetric_eigenvalues().max().max(f64::MIN_POSITIVE);
    let step = 1.0 / lipschitz;
    let mut w = DVector::zeros(a.ncols());
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let grad = &ata * &w - &atb;
        let next = (&w - grad * step).map(|v| v.max(0.0));
        let change = (&next - &w).amax();
        w = next;
        if change < 1e-15 {
            break;
        }
    }
    let objective = objective(a, b, &w);
    NnlsSolution {
        weights: w,
        objective,
        iterations,
    }
}
