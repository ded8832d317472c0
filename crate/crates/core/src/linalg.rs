//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub fn tensor_from_matrix(m: &DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    Tensor::matrix(r, c, data).expect("row-major copy")
}

pub fn matrix_from_tensor(t: &Tensor) -> Result<DMatrix<f64>> {
    if t.rank() != 2 {
        return Err(Error::invalid(format!(
            "expected a matrix, got shape {:?}",
            t.shape()
        )));
    }
    Ok(DMatrix::from_row_slice(t.shape()[0], t.shape()[1], t.data()))
}

pub fn tensor_from_vector(v: &DVector<f64>) -> Tensor {
    Tensor::vector(v.iter().copied().collect())
}

/// Pairwise (tree) summation; the result depends only on the input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Tree reduction of per-item gradient lists into their elementwise sum.
pub fn pairwise_sum_tensors(items: &[Vec<Tensor>]) -> Result<Vec<Tensor>> {
    match items.len() {
        0 => Ok(Vec::new()),
        1 => Ok(items[0].clone()),
        n => {
            let (a, b) = items.split_at(n / 2);
            let mut left = pairwise_sum_tensors(a)?;
            let right = pairwise_sum_tensors(b)?;
            for (l, r) in left.iter_mut().zip(&right) {
                l.add_assign(r)?;
            }
            Ok(left)
        }
    }
}

/// Permutes columns so that `out[:, i] = x[:, perm[i]]`.
pub fn permute_columns(x: &Tensor, perm: &[usize]) -> Tensor {
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &x.data()[r * cols..(r + 1) * cols];
        data.extend(perm.iter().map(|&c| row[c]));
    }
    Tensor::matrix(rows, cols, data).expect("same shape")
}
