//! Central finite-difference checks of tape gradients.
//!
//! The numeric side only evaluates the forward pass on fresh constant tapes,
//! so it never touches the backward rules it is checking.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all coordinates, counting any coordinate
    /// whose absolute error is within the floor as zero.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub coordinates: usize,
    /// Smallest |input| to a kinked activation at the base point.
    pub kink_margin: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error <= rel_tol
    }
}

/// Compares `d f / d params` from the tape with central differences of
/// step `h`. `f` must build a scalar output from the bound parameters.
pub fn check_gradients<F>(params: &[Tensor], h: f64, abs_floor: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let leaves: Vec<Var<'_>> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&tape, &leaves)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|&l| tape.grad_or_zeros(l)).collect();
    let kink_margin = tape.kink_margin();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let t = Tape::new();
        let vars: Vec<Var<'_>> = ps.iter().map(|p| t.constant(p.clone())).collect();
        f(&t, &vars)?.item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        coordinates: 0,
        kink_margin,
        worst: None,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for k in 0..p.numel() {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi].data()[k];
            let diff = (a - numeric).abs();
            let rel = if diff <= abs_floor {
                0.0
            } else {
                diff / a.abs().max(numeric.abs())
            };
            report.coordinates += 1;
            report.max_abs_error = report.max_abs_error.max(diff);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((pi, k, a, numeric));
            }
        }
    }
    Ok(report)
}
