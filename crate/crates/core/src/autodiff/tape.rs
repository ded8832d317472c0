//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Nodes are
//! appended in evaluation order, so the node list is already topologically
//! sorted and [`Tape::backward`] is a single reverse sweep. Leaf gradients
//! accumulate across backward calls until [`Tape::zero_grad`].

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{gemm, split_axis, Tensor};
use crate::error::{Error, Result};

/// Slope of the leaky-ReLU on the negative half-line.
pub const LEAKY_SLOPE: f64 = 0.01;

/// q(z) = max(z, 0) + 0.01 min(z, 0).
pub fn leaky_relu(z: f64) -> f64 {
    if z >= 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Sum(usize),
    MeanAxis(usize, usize),
    SumAxis(usize, usize),
    BroadcastAxis(usize, usize),
    Expand(usize),
    Concat(Vec<usize>, usize),
    Reshape(usize),
    Exp(usize),
    Abs(usize),
    LeakyRelu(usize),
    Square(usize),
    Sqrt(usize),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    leaf_grads: RefCell<Vec<(usize, Tensor)>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Registers a gradient-tracking leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a value that is never differentiated.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?
            .value();
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::invalid(format!(
                "concat: axis {axis} out of range for rank {rank}"
            )));
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        for v in &values[1..] {
            let same = v.rank() == rank
                && (0..rank).all(|d| d == axis || v.shape()[d] == first.shape()[d]);
            if !same {
                return Err(shape_err("concat", &first, v));
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = values.iter().map(|v| v.shape()[axis]).sum();
        let (outer, total, inner) = split_axis(&shape, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let ext = v.shape()[axis];
                let start = o * ext * inner;
                data.extend_from_slice(&v.data()[start..start + ext * inner]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = self.requires(&ids);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(ids, axis), rg))
    }

    /// Reverse sweep from a scalar output; accumulates into leaf gradients.
    pub fn backward(&self, output: Var<'_>) -> Result<()> {
        if !std::ptr::eq(output.tape, self) {
            return Err(Error::Detached);
        }
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.numel() != 1 {
            return Err(Error::NotScalar(out.value.shape().to_vec()));
        }
        if !out.requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.id + 1];
        grads[output.id] = Some(Tensor::full(out.value.shape(), 1.0));
        let mut leaf_grads = self.leaf_grads.borrow_mut();

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut send = |target: usize, grad: Tensor| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(grad.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(grad),
                }
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    match leaf_grads.iter_mut().find(|(lid, _)| *lid == id) {
                        Some((_, acc)) => acc.add_assign(&g)?,
                        None => leaf_grads.push((id, g)),
                    }
                }
                Op::Constant => {}
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.scaled(-1.0));
                    send(*a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, val(*b), |g, y| g * y);
                    let gb = zip_map(&g, val(*a), |g, x| g * x);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Div(a, b) => {
                    let x = val(*a);
                    let y = val(*b);
                    let ga = zip_map(&g, y, |g, y| g / y);
                    let gb = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(x.data())
                            .zip(y.data())
                            .map(|((g, x), y)| -g * x / (y * y))
                            .collect(),
                    )?;
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Scale(a, c) => send(*a, g.scaled(*c)),
                Op::AddScalar(a) => send(*a, g),
                Op::MatMul(a, b) => {
                    let x = val(*a);
                    let y = val(*b);
                    let (m, k) = (x.shape()[0], x.shape()[1]);
                    let n = y.shape()[1];
                    if nodes[*a].requires_grad {
                        let mut ga = Tensor::zeros(&[m, k]);
                        gemm(m, n, k, g.data(), false, y.data(), true, ga.data_mut(), 0.0);
                        send(*a, ga);
                    }
                    if nodes[*b].requires_grad {
                        let mut gb = Tensor::zeros(&[k, n]);
                        gemm(k, m, n, x.data(), true, g.data(), false, gb.data_mut(), 0.0);
                        send(*b, gb);
                    }
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    send(*a, Tensor::full(val(*a).shape(), s));
                }
                Op::MeanAxis(a, axis) | Op::SumAxis(a, axis) => {
                    let shape = val(*a).shape().to_vec();
                    let (outer, ext, inner) = split_axis(&shape, *axis);
                    let scale = match node.op {
                        Op::MeanAxis(..) => 1.0 / ext as f64,
                        _ => 1.0,
                    };
                    send(*a, repeat_axis(&g, &shape, outer, ext, inner, scale));
                }
                Op::BroadcastAxis(a, axis) => {
                    let (outer, ext, inner) = split_axis(g.shape(), *axis);
                    send(*a, reduce_axis(&g, *axis, outer, ext, inner, 1.0));
                }
                Op::Expand(a) => {
                    let s: f64 = g.data().iter().sum();
                    send(*a, Tensor::full(val(*a).shape(), s));
                }
                Op::Concat(ids, axis) => {
                    let (outer, total, inner) = split_axis(g.shape(), *axis);
                    let mut offset = 0;
                    for &pid in ids {
                        let pshape = val(pid).shape().to_vec();
                        let ext = pshape[*axis];
                        let mut part = Vec::with_capacity(outer * ext * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            part.extend_from_slice(&g.data()[start..start + ext * inner]);
                        }
                        offset += ext;
                        send(pid, Tensor::new(pshape, part)?);
                    }
                }
                Op::Reshape(a) => {
                    let shape = val(*a).shape().to_vec();
                    send(*a, g.reshape(&shape)?);
                }
                Op::Exp(a) => send(*a, zip_map(&g, &node.value, |g, e| g * e)),
                Op::Abs(a) => send(
                    *a,
                    zip_map(&g, val(*a), |g, x| {
                        if x > 0.0 {
                            g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    }),
                ),
                Op::LeakyRelu(a) => send(
                    *a,
                    zip_map(&g, val(*a), |g, x| if x >= 0.0 { g } else { LEAKY_SLOPE * g }),
                ),
                Op::Square(a) => send(*a, zip_map(&g, val(*a), |g, x| 2.0 * g * x)),
                Op::Sqrt(a) => send(*a, zip_map(&g, &node.value, |g, r| 0.5 * g / r)),
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, leaf: Var<'_>) -> Option<Tensor> {
        self.leaf_grads
            .borrow()
            .iter()
            .find(|(id, _)| *id == leaf.id)
            .map(|(_, g)| g.clone())
    }

    /// Gradient of `leaf`, or zeros of its shape when unreached.
    pub fn grad_or_zeros(&self, leaf: Var<'_>) -> Tensor {
        self.grad(leaf)
            .unwrap_or_else(|| Tensor::zeros(leaf.value().shape()))
    }

    pub fn zero_grad(&self) {
        self.leaf_grads.borrow_mut().clear();
    }

    /// Smallest |input| over all recorded non-smooth activations (leaky-ReLU
    /// and absolute value). Finite-difference checks use this to keep step
    /// sizes away from kinks.
    pub fn kink_margin(&self) -> f64 {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(a) | Op::Abs(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| nodes[a].value.data().iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map shapes agree")
}

/// Repeats `g` (extent 1 on the axis) `ext` times, scaled.
fn repeat_axis(
    g: &Tensor,
    shape: &[usize],
    outer: usize,
    ext: usize,
    inner: usize,
    scale: f64,
) -> Tensor {
    let mut data = Vec::with_capacity(outer * ext * inner);
    for o in 0..outer {
        let src = &g.data()[o * inner..(o + 1) * inner];
        for _ in 0..ext {
            data.extend(src.iter().map(|v| v * scale));
        }
    }
    Tensor::new(shape.to_vec(), data).expect("repeat_axis shape")
}

/// Sums `t` over `axis`, keeping the axis with extent 1, then scales.
fn reduce_axis(t: &Tensor, axis: usize, outer: usize, ext: usize, inner: usize, scale: f64) -> Tensor {
    let mut data = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut data[o * inner..(o + 1) * inner];
        for a in 0..ext {
            let start = (o * ext + a) * inner;
            for (d, s) in dst.iter_mut().zip(&t.data()[start..start + inner]) {
                *d += s;
            }
        }
        if scale != 1.0 {
            for d in dst.iter_mut() {
                *d *= scale;
            }
        }
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = 1;
    Tensor::new(shape, data).expect("reduce_axis shape")
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(&[self.id])
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(
        &self,
        other: &Var<'t>,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(shape_err(op, &a, &b));
        }
        let out = zip_map(&a, &b, f);
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(out, make(self.id, other.id), rg))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", |x, y| x / y, Op::Div)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(self.value().scaled(c), Op::Scale(self.id, c))
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v + c), Op::AddScalar(self.id))
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = other.value();
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err("matmul", &a, &b));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(m, k, n, a.data(), false, b.data(), false, out.data_mut(), 0.0);
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<Rc<Tensor>> {
        let v = self.value();
        if axis >= v.rank() {
            return Err(Error::invalid(format!(
                "{op}: axis {axis} out of range for shape {:?}",
                v.shape()
            )));
        }
        Ok(v)
    }

    /// Mean over `axis`, keeping it with extent 1.
    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let v = self.check_axis("mean_axis", axis)?;
        let (outer, ext, inner) = split_axis(v.shape(), axis);
        if ext == 0 {
            return Err(Error::invalid("mean_axis over an empty axis"));
        }
        let out = reduce_axis(&v, axis, outer, ext, inner, 1.0 / ext as f64);
        Ok(self.unary(out, Op::MeanAxis(self.id, axis)))
    }

    /// Sum over `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let v = self.check_axis("sum_axis", axis)?;
        let (outer, ext, inner) = split_axis(v.shape(), axis);
        let out = reduce_axis(&v, axis, outer, ext, inner, 1.0);
        Ok(self.unary(out, Op::SumAxis(self.id, axis)))
    }

    /// Repeats an extent-1 `axis` `times` times.
    pub fn broadcast_axis(&self, axis: usize, times: usize) -> Result<Var<'t>> {
        let v = self.check_axis("broadcast_axis", axis)?;
        if v.shape()[axis] != 1 {
            return Err(Error::Shape {
                op: "broadcast_axis",
                lhs: v.shape().to_vec(),
                rhs: vec![times],
            });
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = times;
        let (outer, _, inner) = split_axis(v.shape(), axis);
        let out = repeat_axis(&v, &shape, outer, times, inner, 1.0);
        Ok(self.unary(out, Op::BroadcastAxis(self.id, axis)))
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn expand(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value();
        if v.numel() != 1 {
            return Err(Error::Shape {
                op: "expand",
                lhs: v.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(self.unary(Tensor::full(shape, v.data()[0]), Op::Expand(self.id)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn abs(&self) -> Var<'t> {
        self.unary(self.value().map(f64::abs), Op::Abs(self.id))
    }

    pub fn leaky_relu(&self) -> Var<'t> {
        self.unary(self.value().map(leaky_relu), Op::LeakyRelu(self.id))
    }

    pub fn square(&self) -> Var<'t> {
        self.unary(self.value().map(|v| v * v), Op::Square(self.id))
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.unary(self.value().map(f64::sqrt), Op::Sqrt(self.id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_relu_negative_one() {
        assert_eq!(leaky_relu(-1.0), -0.01);
        assert_eq!(leaky_relu(2.5), 2.5);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.square();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item().unwrap(), 6.0);
    }

    #[test]
    fn product_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::scalar(5.0));
        let z = x.mul(&y).unwrap();
        tape.backward(z).unwrap();
        assert_eq!(tape.grad(x).unwrap().item().unwrap(), 5.0);
        assert_eq!(tape.grad(y).unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.square();
        tape.backward(y).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap().item().unwrap(), 12.0);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x.square()), Err(Error::NotScalar(_))));
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(c.square()), Err(Error::Detached)));
        let other = Tape::new();
        let z = other.leaf(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(z), Err(Error::Detached)));
    }

    #[test]
    fn mean_axis_of_constant() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[3, 2], 5.0));
        let m = x.mean_axis(0).unwrap();
        assert_eq!(m.shape(), vec![1, 2]);
        assert_eq!(m.value().data(), &[5.0, 5.0]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 2]));
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[3, 2]"));
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn concat_and_split_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let w = tape.constant(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let loss = c.mul(&w).unwrap().sum();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap().data(), &[1.0, 4.0]);
        assert_eq!(tape.grad(b).unwrap().data(), &[2.0, 3.0, 5.0, 6.0]);
    }
}
