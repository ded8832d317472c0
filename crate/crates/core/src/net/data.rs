use nalgebra::{DMatrix, DVector};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::linalg::tensor_from_matrix;

/// Features `x` (n x p) with outcomes `y` (n).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if y.len() != n {
            return Err(Error::Shape {
                op: "dataset",
                lhs: vec![n, p],
                rhs: vec![y.len()],
            });
        }
        if n < 2 || p < 1 {
            return Err(Error::invalid(format!(
                "dataset needs n >= 2 and p >= 1, got n={n}, p={p}"
            )));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset entries".into()));
        }
        Ok(Dataset { x, y })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("ragged feature rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), p, &flat), DVector::from_vec(y))
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x_tensor(&self) -> Tensor {
        tensor_from_matrix(&self.x)
    }

    /// Same features, outcomes replaced.
    pub fn with_y(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(rows);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        Self::new(x, y)
    }
}

/// Mean and population standard deviation of each column of a row-major
/// `n x p` buffer.
pub(crate) fn column_stats(data: &[f64], n: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; p];
    for row in data.chunks_exact(p) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; p];
    for row in data.chunks_exact(p) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let sd = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
    (mean, sd)
}

/// (v - mean) / sd with the 0/0 = 0 convention for zero-spread columns.
fn standardize_with(data: &[f64], p: usize, mean: &[f64], sd: &[f64]) -> Vec<f64> {
    data.chunks_exact(p)
        .flat_map(|row| {
            row.iter().zip(mean).zip(sd).map(|((v, m), s)| {
                if *s > 0.0 {
                    (v - m) / s
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// Standardizes training features `x` (n x p) and evaluation points
/// `x0` (m x p) with the column statistics of `x`.
pub fn standardize_features(x: &Tensor, x0: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, p) = (x.shape()[0], x.shape()[1]);
    if x0.rank() != 2 || x0.shape()[1] != p {
        return Err(Error::Shape {
            op: "standardize_features",
            lhs: x.shape().to_vec(),
            rhs: x0.shape().to_vec(),
        });
    }
    let (mean, sd) = column_stats(x.data(), n, p);
    let xs = Tensor::matrix(n, p, standardize_with(x.data(), p, &mean, &sd))?;
    let x0s = Tensor::matrix(x0.shape()[0], p, standardize_with(x0.data(), p, &mean, &sd))?;
    Ok((xs, x0s))
}

/// Standardized representation of a dataset together with an evaluation
/// point, plus the location/scale statistics needed to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct ZStatistic {
    pub x_std: DMatrix<f64>,
    pub y_std: DVector<f64>,
    pub x0_std: DVector<f64>,
    pub x_bar: DVector<f64>,
    pub y_bar: f64,
    pub s_x: DVector<f64>,
    pub s_y: f64,
}

/// Population-variance standardization of `d` and `x0`.
pub fn standardize(d: &Dataset, x0: &DVector<f64>) -> Result<ZStatistic> {
    let (n, p) = (d.n(), d.p());
    if x0.len() != p {
        return Err(Error::Shape {
            op: "standardize",
            lhs: vec![n, p],
            rhs: vec![x0.len()],
        });
    }
    let x = d.x_tensor();
    let (mean, sd) = column_stats(x.data(), n, p);
    let xs = standardize_with(x.data(), p, &mean, &sd);
    let x0s = standardize_with(x0.as_slice(), p, &mean, &sd);
    let (ym, ysd) = column_stats(d.y().as_slice(), n, 1);
    let ys = standardize_with(d.y().as_slice(), 1, &ym, &ysd);
    Ok(ZStatistic {
        x_std: DMatrix::from_row_slice(n, p, &xs),
        y_std: DVector::from_vec(ys),
        x0_std: DVector::from_vec(x0s),
        x_bar: DVector::from_vec(mean),
        y_bar: ym[0],
        s_x: DVector::from_vec(sd),
        s_y: ysd[0],
    })
}

impl ZStatistic {
    /// Inverse map back to `(x, y, x0)`.
    pub fn reconstruct(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let (n, p) = self.x_std.shape();
        let x = DMatrix::from_fn(n, p, |i, j| self.x_std[(i, j)] * self.s_x[j] + self.x_bar[j]);
        let y = self.y_std.map(|v| v * self.s_y + self.y_bar);
        let x0 = DVector::from_fn(p, |j, _| self.x0_std[j] * self.s_x[j] + self.x_bar[j]);
        (x, y, x0)
    }
}

/// Replaces every feature by its weak rank among the training column:
/// `x_ij -> #{k : x_ij >= x_kj}`, and likewise for each evaluation row.
pub fn rank_transform(x: &Tensor, x0: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, p) = (x.shape()[0], x.shape()[1]);
    if x0.rank() != 2 || x0.shape()[1] != p {
        return Err(Error::Shape {
            op: "rank_transform",
            lhs: x.shape().to_vec(),
            rhs: x0.shape().to_vec(),
        });
    }
    let m = x0.shape()[0];
    let mut xr = vec![0.0; n * p];
    let mut x0r = vec![0.0; m * p];
    let mut col = Vec::with_capacity(n);
    for j in 0..p {
        col.clear();
        col.extend((0..n).map(|i| x.data()[i * p + j]));
        col.sort_by(f64::total_cmp);
        let rank = |v: f64| col.partition_point(|&c| c <= v) as f64;
        for i in 0..n {
            xr[i * p + j] = rank(x.data()[i * p + j]);
        }
        for i in 0..m {
            x0r[i * p + j] = rank(x0.data()[i * p + j]);
        }
    }
    Ok((Tensor::matrix(n, p, xr)?, Tensor::matrix(m, p, x0r)?))
}

/// Rank preprocessing of a dataset and one evaluation point. Outcomes are
/// left unchanged.
pub fn rank_preprocess(d: &Dataset, x0: &DVector<f64>) -> Result<(Dataset, DVector<f64>)> {
    let x0t = Tensor::matrix(1, x0.len(), x0.iter().copied().collect())?;
    let (xr, x0r) = rank_transform(&d.x_tensor(), &x0t)?;
    let ranked = Dataset::new(
        DMatrix::from_row_slice(d.n(), d.p(), xr.data()),
        d.y().clone(),
    )?;
    Ok((ranked, DVector::from_column_slice(x0r.data())))
}
