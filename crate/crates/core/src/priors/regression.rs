use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// How a component shape is read between its points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    /// Right-continuous steps: value `v_i` on `[t_i, t_{i+1})`.
    Constant,
    /// Straight lines between points.
    Linear,
}

/// One additive component given by `(x, value)` points with strictly
/// increasing `x`; constant beyond either end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentShape {
    pub interp: Interp,
    pub points: Vec<[f64; 2]>,
}

impl ComponentShape {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("component shape has no points"));
        }
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("component shape point".into()));
        }
        if self.points.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::invalid("component shape x values must strictly increase"));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.points;
        let idx = pts.partition_point(|pt| pt[0] <= x);
        if idx == 0 {
            return pts[0][1];
        }
        if idx == pts.len() {
            return pts[pts.len() - 1][1];
        }
        let (a, b) = (pts[idx - 1], pts[idx]);
        match self.interp {
            Interp::Constant => a[1],
            Interp::Linear => a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0]),
        }
    }

    /// Total variation; for both interpolations it is the summed absolute
    /// change between consecutive points.
    pub fn total_variation(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1][1] - w[0][1]).abs()).sum()
    }

    pub fn scaled(&self, c: f64) -> ComponentShape {
        ComponentShape {
            interp: self.interp,
            points: self.points.iter().map(|&[x, v]| [x, v * c]).collect(),
        }
    }
}

/// Regression function `mu` evaluated on already permuted features.
/// `T` is `Tensor` for a fixed function or `Var` when it carries gradients.
#[derive(Debug, Clone)]
pub enum Regression<T> {
    Zero,
    /// `x -> beta^T x`, `beta` of length p.
    Linear { beta: T },
    /// `x -> sum_j sum_k jumps[k, j] 1{x_j >= knots[k, j]}` over the first
    /// `s` coordinates, both arrays `K x s`.
    Steps { knots: Tensor, jumps: T },
    /// Fixed shapes applied to the listed coordinates.
    Additive(Arc<Vec<(usize, ComponentShape)>>),
}

impl Regression<Tensor> {
    pub fn bind<'t>(&self, tape: &'t Tape) -> Regression<Var<'t>> {
        match self {
            Regression::Zero => Regression::Zero,
            Regression::Linear { beta } => Regression::Linear {
                beta: tape.constant(beta.clone()),
            },
            Regression::Steps { knots, jumps } => Regression::Steps {
                knots: knots.clone(),
                jumps: tape.constant(jumps.clone()),
            },
            Regression::Additive(c) => Regression::Additive(c.clone()),
        }
    }

    /// Values at the rows of `x` (m x p).
    pub fn eval_values(&self, x: &Tensor) -> Result<Vec<f64>> {
        let tape = Tape::new();
        Ok(self.bind(&tape).eval(&tape, x)?.value().data().to_vec())
    }

    /// Per-coordinate total variation of the active components.
    pub fn component_variations(&self) -> Vec<(usize, f64)> {
        match self {
            Regression::Zero => Vec::new(),
            Regression::Linear { .. } => Vec::new(),
            Regression::Steps { jumps, .. } => {
                let s = jumps.shape()[1];
                (0..s)
                    .map(|j| (j, jumps.data().iter().skip(j).step_by(s).map(|v| v.abs()).sum()))
                    .collect()
            }
            Regression::Additive(c) => c.iter().map(|(j, sh)| (*j, sh.total_variation())).collect(),
        }
    }
}

impl<'t> Regression<Var<'t>> {
    pub fn detach(&self) -> Regression<Tensor> {
        match self {
            Regression::Zero => Regression::Zero,
            Regression::Linear { beta } => Regression::Linear {
                beta: (*beta.value()).clone(),
            },
            Regression::Steps { knots, jumps } => Regression::Steps {
                knots: knots.clone(),
                jumps: (*jumps.value()).clone(),
            },
            Regression::Additive(c) => Regression::Additive(c.clone()),
        }
    }

    /// `mu` at the rows of `x` (m x p), as a length-m vector.
    pub fn eval(&self, tape: &'t Tape, x: &Tensor) -> Result<Var<'t>> {
        let (m, p) = (x.shape()[0], x.shape()[1]);
        match self {
            Regression::Zero => Ok(tape.constant(Tensor::zeros(&[m]))),
            Regression::Linear { beta } => {
                if beta.shape() != [p] {
                    return Err(Error::Shape {
                        op: "linear regression",
                        lhs: vec![m, p],
                        rhs: beta.shape(),
                    });
                }
                tape.constant(x.clone())
                    .matmul(&beta.reshape(&[p, 1])?)?
                    .reshape(&[m])
            }
            Regression::Steps { knots, jumps } => {
                let (k, s) = (knots.shape()[0], knots.shape()[1]);
                if s > p || jumps.shape() != [k, s] {
                    return Err(Error::Shape {
                        op: "step regression",
                        lhs: vec![m, p],
                        rhs: jumps.shape(),
                    });
                }
                let kd = knots.data();
                let mut ind = vec![0.0; m * k * s];
                for i in 0..m {
                    let row = &x.data()[i * p..i * p + s];
                    let out = &mut ind[i * k * s..(i + 1) * k * s];
                    for kk in 0..k {
                        for j in 0..s {
                            if row[j] >= kd[kk * s + j] {
                                out[kk * s + j] = 1.0;
                            }
                        }
                    }
                }
                tape.constant(Tensor::matrix(m, k * s, ind)?)
                    .matmul(&jumps.reshape(&[k * s, 1])?)?
                    .reshape(&[m])
            }
            Regression::Additive(components) => {
                let mut out = vec![0.0; m];
                for (j, shape) in components.iter() {
                    if *j >= p {
                        return Err(Error::invalid(format!(
                            "additive component on coordinate {j} but p = {p}"
                        )));
                    }
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += shape.eval(x.data()[i * p + j]);
                    }
                }
                Ok(tape.constant(Tensor::vector(out)))
            }
        }
    }
}
