//! Equivariant linear layers.
//!
//! Weight containers are generic over the stored type so the same layout
//! serves owned parameters (`Tensor`) and their tape bindings (`Var`).

use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Row- and column-permutation equivariant layer over `n x p x k` arrays.
///
/// Output channel `o` is
/// `sum_i w_id[i,o] v_i + w_row[i,o] mean_rows(v_i) + w_col[i,o] mean_cols(v_i)
///  + w_all[i,o] mean(v_i) + bias[o]`, each pooled term broadcast back.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeableWeights<T> {
    pub w_id: T,
    pub w_row: T,
    pub w_col: T,
    pub w_all: T,
    pub bias: T,
}

/// Permutation-equivariant set layer over `p x k` arrays with a mean-pool
/// term: `v Lambda + 1 mean(v) Gamma + 1 bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepSetWeights<T> {
    pub lambda: T,
    pub gamma: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights<T> {
    pub weight: T,
    pub bias: T,
}

/// Fixed field order used for naming, serialization and binding.
pub trait LayerFields<T>: Sized {
    const FIELDS: &'static [&'static str];
    fn fields(&self) -> Vec<&T>;
    fn fields_mut(&mut self) -> Vec<&mut T>;
    fn from_fields(items: &mut dyn Iterator<Item = T>) -> Option<Self>;
    /// Whether field `i` is a mixing matrix rather than a bias.
    fn field_is_matrix(i: usize) -> bool;
}

impl<T> LayerFields<T> for ExchangeableWeights<T> {
    const FIELDS: &'static [&'static str] = &["w_id", "w_row", "w_col", "w_all", "bias"];

    fn fields(&self) -> Vec<&T> {
        vec![&self.w_id, &self.w_row, &self.w_col, &self.w_all, &self.bias]
    }

    fn fields_mut(&mut self) -> Vec<&mut T> {
        vec![
            &mut self.w_id,
            &mut self.w_row,
            &mut self.w_col,
            &mut self.w_all,
            &mut self.bias,
        ]
    }

    fn from_fields(items: &mut dyn Iterator<Item = T>) -> Option<Self> {
        Some(ExchangeableWeights {
            w_id: items.next()?,
            w_row: items.next()?,
            w_col: items.next()?,
            w_all: items.next()?,
            bias: items.next()?,
        })
    }

    fn field_is_matrix(i: usize) -> bool {
        i < 4
    }
}

impl<T> LayerFields<T> for DeepSetWeights<T> {
    const FIELDS: &'static [&'static str] = &["lambda", "gamma", "bias"];

    fn fields(&self) -> Vec<&T> {
        vec![&self.lambda, &self.gamma, &self.bias]
    }

    fn fields_mut(&mut self) -> Vec<&mut T> {
        vec![&mut self.lambda, &mut self.gamma, &mut self.bias]
    }

    fn from_fields(items: &mut dyn Iterator<Item = T>) -> Option<Self> {
        Some(DeepSetWeights {
            lambda: items.next()?,
            gamma: items.next()?,
            bias: items.next()?,
        })
    }

    fn field_is_matrix(i: usize) -> bool {
        i < 2
    }
}

impl<T> LayerFields<T> for DenseWeights<T> {
    const FIELDS: &'static [&'static str] = &["weight", "bias"];

    fn fields(&self) -> Vec<&T> {
        vec![&self.weight, &self.bias]
    }

    fn fields_mut(&mut self) -> Vec<&mut T> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn from_fields(items: &mut dyn Iterator<Item = T>) -> Option<Self> {
        Some(DenseWeights {
            weight: items.next()?,
            bias: items.next()?,
        })
    }

    fn field_is_matrix(i: usize) -> bool {
        i == 0
    }
}

fn check_mixing(op: &'static str, input: &[usize], w: &Var<'_>) -> Result<(usize, usize)> {
    let ws = w.shape();
    let k = *input.last().unwrap_or(&0);
    if ws.len() != 2 || ws[0] != k {
        return Err(Error::Shape {
            op,
            lhs: input.to_vec(),
            rhs: ws,
        });
    }
    Ok((ws[0], ws[1]))
}

fn check_bias(op: &'static str, b: &Var<'_>, out: usize) -> Result<()> {
    let bs = b.shape();
    if bs != [out] {
        return Err(Error::Shape {
            op,
            lhs: vec![out],
            rhs: bs,
        });
    }
    Ok(())
}

/// Pre-activation of an exchangeable layer on `v` of shape `n x p x k`.
pub fn exchangeable_matrix_layer<'t>(
    v: Var<'t>,
    w: &ExchangeableWeights<Var<'t>>,
) -> Result<Var<'t>> {
    const OP: &str = "exchangeable_matrix_layer";
    let shape = v.shape();
    if shape.len() != 3 {
        return Err(Error::invalid(format!("{OP}: expected rank-3 input, got {shape:?}")));
    }
    let (n, p, k) = (shape[0], shape[1], shape[2]);
    let (_, o) = check_mixing(OP, &shape, &w.w_id)?;
    for m in [&w.w_row, &w.w_col, &w.w_all] {
        if m.shape() != [k, o] {
            return Err(Error::Shape {
                op: OP,
                lhs: vec![k, o],
                rhs: m.shape(),
            });
        }
    }
    check_bias(OP, &w.bias, o)?;

    let id_term = v.reshape(&[n * p, k])?.matmul(&w.w_id)?.reshape(&[n, p, o])?;

    // Pool over observations: one row per feature.
    let row_pool = v.mean_axis(0)?;
    let row_term = row_pool.reshape(&[p, k])?.matmul(&w.w_row)?;
    let all_pool = row_pool.mean_axis(1)?.reshape(&[1, k])?;
    let all_term = all_pool
        .matmul(&w.w_all)?
        .add(&w.bias.reshape(&[1, o])?)?
        .broadcast_axis(0, p)?;
    let per_feature = row_term.add(&all_term)?.reshape(&[1, p, o])?.broadcast_axis(0, n)?;

    // Pool over features: one row per observation.
    let col_term = v
        .mean_axis(1)?
        .reshape(&[n, k])?
        .matmul(&w.w_col)?
        .reshape(&[n, 1, o])?
        .broadcast_axis(1, p)?;

    id_term.add(&per_feature)?.add(&col_term)
}

/// Pre-activation of a deep-set layer on `v` of shape `p x k`, or a batch
/// `m x p x k` of independent sets.
pub fn deep_set_layer<'t>(v: Var<'t>, w: &DeepSetWeights<Var<'t>>) -> Result<Var<'t>> {
    const OP: &str = "deep_set_layer";
    let shape = v.shape();
    let (m, p, k) = match shape.as_slice() {
        [p, k] => (1, *p, *k),
        [m, p, k] => (*m, *p, *k),
        _ => {
            return Err(Error::invalid(format!(
                "{OP}: expected rank-2 or rank-3 input, got {shape:?}"
            )))
        }
    };
    let (_, o) = check_mixing(OP, &shape, &w.lambda)?;
    if w.gamma.shape() != [k, o] {
        return Err(Error::Shape {
            op: OP,
            lhs: vec![k, o],
            rhs: w.gamma.shape(),
        });
    }
    check_bias(OP, &w.bias, o)?;

    let v3 = v.reshape(&[m, p, k])?;
    let elem = v3.reshape(&[m * p, k])?.matmul(&w.lambda)?.reshape(&[m, p, o])?;
    let pooled = v3
        .mean_axis(1)?
        .reshape(&[m, k])?
        .matmul(&w.gamma)?
        .add(&w.bias.reshape(&[1, o])?.broadcast_axis(0, m)?)?
        .reshape(&[m, 1, o])?
        .broadcast_axis(1, p)?;
    let out = elem.add(&pooled)?;
    if shape.len() == 2 {
        out.reshape(&[p, o])
    } else {
        Ok(out)
    }
}

/// Affine layer on `m x k` rows.
pub fn dense_layer<'t>(v: Var<'t>, w: &DenseWeights<Var<'t>>) -> Result<Var<'t>> {
    const OP: &str = "dense_layer";
    let shape = v.shape();
    if shape.len() != 2 {
        return Err(Error::invalid(format!("{OP}: expected rank-2 input, got {shape:?}")));
    }
    let (_, o) = check_mixing(OP, &shape, &w.weight)?;
    check_bias(OP, &w.bias, o)?;
    v.matmul(&w.weight)?
        .add(&w.bias.reshape(&[1, o])?.broadcast_axis(0, shape[0])?)
}

/// Applies `layers` in order with leaky-ReLU after every hidden layer, and
/// after the last one too when `activate_output` is set.
pub(crate) fn stack<'t, L>(
    mut v: Var<'t>,
    layers: &[L],
    activate_output: bool,
    apply: impl Fn(Var<'t>, &L) -> Result<Var<'t>>,
) -> Result<Var<'t>> {
    let last = layers.len().saturating_sub(1);
    for (i, layer) in layers.iter().enumerate() {
        v = apply(v, layer)?;
        if i < last || activate_output {
            v = v.leaky_relu();
        }
    }
    Ok(v)
}
