use nalgebra::DMatrix;

use super::data::{rank_transform, standardize_features, Dataset};
use super::layers::{deep_set_layer, dense_layer, exchangeable_matrix_layer, stack};
use super::params::{ArchitectureConfig, EstimatorParams, NetWeights, Parameterized};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::eval::Estimator;
use crate::linalg::{tensor_from_matrix, tensor_from_vector};

fn finite_or<'t>(v: Var<'t>, module: usize) -> Result<Var<'t>> {
    if v.value().is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("module {module} output")))
    }
}

/// Predictions at every row of `x0` (m x p) from features `x` (n x p) and
/// outcomes `y` (n). The outcomes may carry gradients; features are data.
pub fn forward<'t>(
    config: &ArchitectureConfig,
    w: &NetWeights<Var<'t>>,
    x: &Tensor,
    y: Var<'t>,
    x0: &Tensor,
) -> Result<Var<'t>> {
    let tape = y.tape();
    if x.rank() != 2 || y.shape() != [x.shape()[0]] {
        return Err(Error::Shape {
            op: "forward",
            lhs: x.shape().to_vec(),
            rhs: y.shape(),
        });
    }
    let (n, p) = (x.shape()[0], x.shape()[1]);
    if x0.rank() != 2 || x0.shape()[1] != p {
        return Err(Error::Shape {
            op: "forward",
            lhs: x.shape().to_vec(),
            rhs: x0.shape().to_vec(),
        });
    }
    let m = x0.shape()[0];

    let (x_std, x0_std) = if config.rank_preprocess {
        let (xr, x0r) = rank_transform(x, x0)?;
        standardize_features(&xr, &x0r)?
    } else {
        standardize_features(x, x0)?
    };

    let y_bar = y.mean();
    let centered = y.sub(&y_bar.expand(&[n])?)?;
    let var = centered.square().mean();
    let (s_y, y_std) = if var.value().data()[0] > 0.0 {
        let s = var.sqrt();
        (s, centered.div(&s.expand(&[n])?)?)
    } else {
        (tape.scalar(0.0), tape.constant(Tensor::zeros(&[n])))
    };

    let d0 = tape.concat(
        &[
            tape.constant(x_std.reshape(&[n, p, 1])?),
            y_std.reshape(&[n, 1, 1])?.broadcast_axis(1, p)?,
        ],
        2,
    )?;

    let d1 = stack(d0, &w.module1, true, exchangeable_matrix_layer)?;
    let d1 = finite_or(d1, 1)?;
    let o1 = d1.shape()[2];
    let pooled = d1.mean_axis(0)?.reshape(&[p, o1])?;

    let d2 = finite_or(stack(pooled, &w.module2, true, deep_set_layer)?, 2)?;
    let o2 = d2.shape()[1];
    let augmented = tape.concat(
        &[
            d2.reshape(&[1, p, o2])?.broadcast_axis(0, m)?,
            tape.constant(x0_std.reshape(&[m, p, 1])?),
        ],
        2,
    )?;

    let d3 = finite_or(stack(augmented, &w.module3, true, deep_set_layer)?, 3)?;
    let o3 = d3.shape()[2];
    let d3 = d3.mean_axis(1)?.reshape(&[m, o3])?;

    let d4 = finite_or(stack(d3, &w.module4, true, dense_layer)?, 4)?;
    let d4 = d4.reshape(&[m])?;

    y_bar.expand(&[m])?.add(&s_y.expand(&[m])?.mul(&d4)?)
}

impl EstimatorParams {
    /// Binds the weights on `tape`, as leaves when `track` is set.
    pub fn bind<'t>(&self, tape: &'t Tape, track: bool) -> Result<NetWeights<Var<'t>>> {
        NetWeights::assemble(&self.config, Parameterized::bind(self, tape, track))
    }

    /// Predictions at the rows of `x0`.
    pub fn predict_many(&self, d: &Dataset, x0: &DMatrix<f64>) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let w = self.bind(&tape, false)?;
        let y = tape.constant(tensor_from_vector(d.y()));
        let out = forward(&self.config, &w, &d.x_tensor(), y, &tensor_from_matrix(x0))?;
        let v = out.value();
        Ok(v.data().to_vec())
    }

    pub fn predict(&self, d: &Dataset, x0: &[f64]) -> Result<f64> {
        let x0 = DMatrix::from_row_slice(1, x0.len(), x0);
        Ok(self.predict_many(d, &x0)?[0])
    }
}

impl Estimator for EstimatorParams {
    fn name(&self) -> String {
        "amc".into()
    }

    fn predict(&self, d: &Dataset, x0: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.predict_many(d, x0)
    }
}

/// Odd-in-outcome part of an estimator: `(T(x, y) - T(x, -y)) / 2`.
#[derive(Debug, Clone)]
pub struct Symmetrized<E>(pub E);

pub fn symmetrize<E: Estimator>(inner: E) -> Symmetrized<E> {
    Symmetrized(inner)
}

impl<E: Estimator> Estimator for Symmetrized<E> {
    fn name(&self) -> String {
        format!("{}_sym", self.0.name())
    }

    fn predict(&self, d: &Dataset, x0: &DMatrix<f64>) -> Result<Vec<f64>> {
        let plus = self.0.predict(d, x0)?;
        let flipped = d.with_y(-d.y())?;
        let minus = self.0.predict(&flipped, x0)?;
        Ok(plus.iter().zip(&minus).map(|(a, b)| 0.5 * (a - b)).collect())
    }
}
