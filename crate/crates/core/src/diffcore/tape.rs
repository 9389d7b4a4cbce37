//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each primitive call
//! evaluates immediately, appends one step to the record and hands back a
//! [`Var`] handle. [`Tape::backward`] then walks the record in reverse and
//! returns the gradient of a scalar loss with respect to every leaf that
//! requires one. Because the record stores everything needed to recompute
//! each step, [`Tape::replay`] can re-run it with substituted leaf values;
//! data-dependent choices baked into the record (row selections, masks)
//! are held fixed across a replay.

use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to one value in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One recorded primitive application.
#[derive(Clone, Debug)]
pub enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var, T),
    Relu(Var),
    Abs(Var),
    Softmax { input: Var, keep: Option<Vec<bool>> },
    Sum(Var),
    Mean(Var),
    MeanAxis { input: Var, axis: usize },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize, len: usize },
    Transpose(Var),
    Reshape { input: Var, shape: Vec<usize> },
    StopGradient(Var),
    GatherRows { input: Var, index: Vec<usize> },
    ScatterRows { input: Var, index: Vec<usize>, rows: usize },
    WhereRows { mask: Vec<bool>, on: Var, off: Var },
    BroadcastRows { input: Var, rows: usize },
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul(..) => "batch_matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Abs(..) => "abs",
            Op::Softmax { .. } => "softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(..) => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::StopGradient(..) => "stop_gradient",
            Op::GatherRows { .. } => "gather_rows",
            Op::ScatterRows { .. } => "scatter_rows",
            Op::WhereRows { .. } => "where_rows",
            Op::BroadcastRows { .. } => "broadcast_rows",
        }
    }

    /// Inputs in the order the primitive consumes them.
    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::BatchMatMul(a, b)
            | Op::Add(a, b)
            | Op::AddBias(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Transpose(a)
            | Op::StopGradient(a) => vec![*a],
            Op::Softmax { input, .. }
            | Op::MeanAxis { input, .. }
            | Op::Slice { input, .. }
            | Op::Reshape { input, .. }
            | Op::GatherRows { input, .. }
            | Op::ScatterRows { input, .. }
            | Op::BroadcastRows { input, .. } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::WhereRows { on, off, .. } => vec![*on, *off],
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive applications (the computation record).
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar loss with respect to the leaves of a tape.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf; `None` for leaves that do not require one.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

/// Splits a shape around `axis` into (outer, dim, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn last2(shape: &[usize]) -> (usize, usize, usize) {
    let r = shape.len();
    let batch = shape[..r - 2].iter().product();
    (batch, shape[r - 2], shape[r - 1])
}

fn transpose_last2<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (batch, rows, cols) = last2(t.shape());
    let src = t.data();
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        let off = b * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[off + j * rows + i] = src[off + i * cols + j];
            }
        }
    }
    let mut shape = t.shape().to_vec();
    let r = shape.len();
    shape.swap(r - 1, r - 2);
    Tensor::new(shape, out).expect("transpose preserves size")
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip_map on equal shapes")
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn op(&self, var: Var) -> &Op<T> {
        &self.nodes[var.0].op
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// All handles in record order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownVar(var.0))
        }
    }

    fn push(&mut self, op: Op<T>) -> Result<Var> {
        for v in op.inputs() {
            self.check(v)?;
        }
        let value = self.eval(&op)?;
        let requires_grad = match &op {
            Op::StopGradient(_) | Op::Leaf => false,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Recomputes the record with some leaves replaced; every other leaf
    /// keeps its recorded value.
    pub fn replay(&self, overrides: &[(Var, &Tensor<T>)]) -> Result<Tape<T>> {
        self.replay_with(overrides, false)
    }

    /// Like [`Tape::replay`], but gradient stops keep their recorded values
    /// and `relu`/`abs` keep their recorded branches, so perturbations only
    /// travel along the differentiable paths of the recorded piece.
    pub fn replay_blocked(&self, overrides: &[(Var, &Tensor<T>)]) -> Result<Tape<T>> {
        self.replay_with(overrides, true)
    }

    fn replay_with(&self, overrides: &[(Var, &Tensor<T>)], blocked: bool) -> Result<Tape<T>> {
        let mut out = Tape {
            nodes: Vec::with_capacity(self.nodes.len()),
        };
        for (i, node) in self.nodes.iter().enumerate() {
            let value = match &node.op {
                Op::Leaf => match overrides.iter().find(|(v, _)| v.0 == i) {
                    Some((_, t)) => {
                        if t.shape() != node.value.shape() {
                            return Err(Error::shape("replay", &[node.value.shape(), t.shape()]));
                        }
                        (*t).clone()
                    }
                    None => node.value.clone(),
                },
                Op::StopGradient(_) if blocked => node.value.clone(),
                Op::Relu(a) if blocked => zip_map(out.value(*a), self.value(*a), |v, r| if r > T::zero() { v } else { T::zero() }),
                Op::Abs(a) if blocked => zip_map(out.value(*a), self.value(*a), |v, r| {
                    if r > T::zero() {
                        v
                    } else if r < T::zero() {
                        -v
                    } else {
                        T::zero()
                    }
                }),
                op => out.eval(op)?,
            };
            out.nodes.push(Node {
                value,
                op: node.op.clone(),
                requires_grad: node.requires_grad,
            });
        }
        Ok(out)
    }

    // ---- primitives -------------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// `[B, m, k] × [B, k, n] → [B, m, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::BatchMatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    /// Adds a length-`n` bias to every row of a `[.., n]` array.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.push(Op::AddBias(x, bias))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        self.push(Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.push(Op::AddScalar(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Abs(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softmax { input: a, keep: None })
    }

    /// Softmax over the last axis restricted to entries whose `keep` flag is
    /// set; dropped entries come out as exactly zero.
    pub fn softmax_masked(&mut self, a: Var, keep: Vec<bool>) -> Result<Var> {
        self.push(Op::Softmax {
            input: a,
            keep: Some(keep),
        })
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Mean(a))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.push(Op::MeanAxis { input: a, axis })
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        self.push(Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        })
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.push(Op::Slice {
            input: a,
            axis,
            start,
            len,
        })
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape {
            input: a,
            shape: shape.to_vec(),
        })
    }

    pub fn stop_gradient(&mut self, a: Var) -> Result<Var> {
        self.push(Op::StopGradient(a))
    }

    /// Selects slices of the leading axis, in the given order.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        self.push(Op::GatherRows {
            input: a,
            index: index.to_vec(),
        })
    }

    /// Places row `i` of `a` at row `index[i]` of a zero array with `rows`
    /// leading slices.
    pub fn scatter_rows(&mut self, a: Var, index: &[usize], rows: usize) -> Result<Var> {
        self.push(Op::ScatterRows {
            input: a,
            index: index.to_vec(),
            rows,
        })
    }

    /// Row-wise select: rows flagged in `mask` come from `on`, others from `off`.
    pub fn where_rows(&mut self, mask: &[bool], on: Var, off: Var) -> Result<Var> {
        self.push(Op::WhereRows {
            mask: mask.to_vec(),
            on,
            off,
        })
    }

    /// Repeats a single-row array `rows` times along the leading axis.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        self.push(Op::BroadcastRows { input: a, rows })
    }

    // ---- forward evaluation ----------------------------------------------

    fn eval(&self, op: &Op<T>) -> Result<Tensor<T>> {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => unreachable!("leaves are never evaluated"),
            Op::MatMul(a, b) => {
                let (a, b) = (val(a), val(b));
                if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(Error::shape("matmul", &[a.shape(), b.shape()]));
                }
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let mut out = Tensor::zeros(vec![m, n]);
                T::gemm(m, k, n, a.data(), false, b.data(), false, out.data_mut(), false);
                Ok(out)
            }
            Op::BatchMatMul(a, b) => {
                let (a, b) = (val(a), val(b));
                if a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1] {
                    return Err(Error::shape("batch_matmul", &[a.shape(), b.shape()]));
                }
                let (batch, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
                let mut out = Tensor::zeros(vec![batch, m, n]);
                let od = out.data_mut();
                for i in 0..batch {
                    T::gemm(
                        m,
                        k,
                        n,
                        &a.data()[i * m * k..],
                        false,
                        &b.data()[i * k * n..],
                        false,
                        &mut od[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
                Ok(out)
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (x, y) = (val(a), val(b));
                if x.shape() != y.shape() {
                    return Err(Error::shape(op.name(), &[x.shape(), y.shape()]));
                }
                Ok(match op {
                    Op::Add(..) => zip_map(x, y, |p, q| p + q),
                    Op::Sub(..) => zip_map(x, y, |p, q| p - q),
                    Op::Mul(..) => zip_map(x, y, |p, q| p * q),
                    _ => zip_map(x, y, |p, q| p / q),
                })
            }
            Op::AddBias(x, b) => {
                let (x, b) = (val(x), val(b));
                let n = *x.shape().last().unwrap_or(&0);
                if b.len() != n || n == 0 {
                    return Err(Error::shape("add_bias", &[x.shape(), b.shape()]));
                }
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(n) {
                    for (o, &bv) in row.iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                Ok(out)
            }
            Op::Scale(a, s) => Ok(val(a).map(|v| v * *s)),
            Op::AddScalar(a, c) => Ok(val(a).map(|v| v + *c)),
            Op::Relu(a) => Ok(val(a).map(|v| if v > T::zero() { v } else { T::zero() })),
            Op::Abs(a) => Ok(val(a).map(|v| v.abs())),
            Op::Softmax { input, keep } => {
                let x = val(input);
                if !x.is_finite() {
                    return Err(Error::NonFinite { op: "softmax" });
                }
                let n = *x.shape().last().unwrap_or(&0);
                if n == 0 {
                    return Err(Error::shape("softmax", &[x.shape()]));
                }
                if let Some(k) = keep {
                    if k.len() != x.len() {
                        return Err(Error::arg("softmax", format!("mask has {} entries for {} values", k.len(), x.len())));
                    }
                }
                let mut out = Tensor::zeros(x.shape().to_vec());
                for (r, (src, dst)) in x.data().chunks(n).zip(out.data_mut().chunks_mut(n)).enumerate() {
                    let kept = |j: usize| keep.as_ref().map_or(true, |k| k[r * n + j]);
                    let mut max = T::neg_infinity();
                    for (j, &v) in src.iter().enumerate() {
                        if kept(j) && v > max {
                            max = v;
                        }
                    }
                    if max == T::neg_infinity() {
                        return Err(Error::arg("softmax", format!("row {r} has every entry masked")));
                    }
                    let mut total = T::zero();
                    for (j, (&v, o)) in src.iter().zip(dst.iter_mut()).enumerate() {
                        if kept(j) {
                            *o = (v - max).exp();
                            total += *o;
                        }
                    }
                    dst.iter_mut().for_each(|o| *o = *o / total);
                }
                Ok(out)
            }
            Op::Sum(a) => Ok(Tensor::scalar(val(a).data().iter().copied().sum())),
            Op::Mean(a) => {
                let x = val(a);
                if x.is_empty() {
                    return Err(Error::shape("mean", &[x.shape()]));
                }
                Ok(Tensor::scalar(x.data().iter().copied().sum::<T>() / T::of(x.len() as f64)))
            }
            Op::MeanAxis { input, axis } => {
                let x = val(input);
                if *axis >= x.rank() || x.shape()[*axis] == 0 {
                    return Err(Error::shape("mean_axis", &[x.shape(), &[*axis]]));
                }
                let (outer, dim, inner) = split_axis(x.shape(), *axis);
                let mut shape = x.shape().to_vec();
                shape.remove(*axis);
                if shape.is_empty() {
                    shape.push(1);
                }
                let mut out = Tensor::zeros(shape);
                let inv = T::one() / T::of(dim as f64);
                let (src, dst) = (x.data(), out.data_mut());
                for o in 0..outer {
                    for d in 0..dim {
                        for i in 0..inner {
                            dst[o * inner + i] += src[(o * dim + d) * inner + i];
                        }
                    }
                }
                dst.iter_mut().for_each(|v| *v *= inv);
                Ok(out)
            }
            Op::Concat { inputs, axis } => {
                let first = inputs.first().ok_or_else(|| Error::arg("concat", "no inputs"))?;
                let base = val(first).shape().to_vec();
                if *axis >= base.len() {
                    return Err(Error::shape("concat", &[&base, &[*axis]]));
                }
                let mut total = 0;
                for v in inputs {
                    let s = val(v).shape();
                    let compatible = s.len() == base.len()
                        && s.iter().zip(&base).enumerate().all(|(i, (p, q))| i == *axis || p == q);
                    if !compatible {
                        let shapes: Vec<&[usize]> = inputs.iter().map(|v| val(v).shape()).collect();
                        return Err(Error::shape("concat", &shapes));
                    }
                    total += s[*axis];
                }
                let mut shape = base.clone();
                shape[*axis] = total;
                let (outer, _, inner) = split_axis(&shape, *axis);
                let mut data = Vec::with_capacity(shape.iter().product());
                for o in 0..outer {
                    for v in inputs {
                        let x = val(v);
                        let w = x.shape()[*axis] * inner;
                        data.extend_from_slice(&x.data()[o * w..(o + 1) * w]);
                    }
                }
                Tensor::new(shape, data)
            }
            Op::Slice { input, axis, start, len } => {
                let x = val(input);
                if *axis >= x.rank() || start + len > x.shape()[*axis] || *len == 0 {
                    return Err(Error::shape("slice", &[x.shape(), &[*axis, *start, *len]]));
                }
                let (outer, dim, inner) = split_axis(x.shape(), *axis);
                let mut shape = x.shape().to_vec();
                shape[*axis] = *len;
                let mut data = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    data.extend_from_slice(&x.data()[base..base + len * inner]);
                }
                Tensor::new(shape, data)
            }
            Op::Transpose(a) => {
                let x = val(a);
                if x.rank() < 2 {
                    return Err(Error::shape("transpose", &[x.shape()]));
                }
                Ok(transpose_last2(x))
            }
            Op::Reshape { input, shape } => {
                let x = val(input);
                if shape.iter().product::<usize>() != x.len() {
                    return Err(Error::shape("reshape", &[x.shape(), shape]));
                }
                x.clone().reshaped(shape.clone())
            }
            Op::StopGradient(a) => Ok(val(a).clone()),
            Op::GatherRows { input, index } => {
                let x = val(input);
                let rows = x.rows();
                if x.rank() == 0 || index.iter().any(|&i| i >= rows) || index.is_empty() {
                    return Err(Error::arg("gather_rows", format!("index out of range for {:?}", x.shape())));
                }
                let mut data = Vec::with_capacity(index.len() * x.row_len());
                for &i in index {
                    data.extend_from_slice(x.row(i));
                }
                let mut shape = x.shape().to_vec();
                shape[0] = index.len();
                Tensor::new(shape, data)
            }
            Op::ScatterRows { input, index, rows } => {
                let x = val(input);
                if index.len() != x.rows() || index.iter().any(|&i| i >= *rows) {
                    return Err(Error::arg("scatter_rows", format!("index does not fit {:?} into {rows} rows", x.shape())));
                }
                let mut shape = x.shape().to_vec();
                shape[0] = *rows;
                let mut out = Tensor::zeros(shape);
                let w = x.row_len();
                let dst = out.data_mut();
                for (r, &i) in index.iter().enumerate() {
                    for (d, &s) in dst[i * w..(i + 1) * w].iter_mut().zip(x.row(r)) {
                        *d += s;
                    }
                }
                Ok(out)
            }
            Op::WhereRows { mask, on, off } => {
                let (a, b) = (val(on), val(off));
                if a.shape() != b.shape() || mask.len() != a.rows() {
                    return Err(Error::shape("where_rows", &[a.shape(), b.shape(), &[mask.len()]]));
                }
                let w = a.row_len();
                let mut data = Vec::with_capacity(a.len());
                for (r, &m) in mask.iter().enumerate() {
                    data.extend_from_slice(if m { &a.data()[r * w..(r + 1) * w] } else { &b.data()[r * w..(r + 1) * w] });
                }
                Tensor::new(a.shape().to_vec(), data)
            }
            Op::BroadcastRows { input, rows } => {
                let x = val(input);
                if x.rows() != 1 {
                    return Err(Error::shape("broadcast_rows", &[x.shape()]));
                }
                let mut shape = x.shape().to_vec();
                if shape.is_empty() {
                    shape.push(1);
                }
                shape[0] = *rows;
                let mut data = Vec::with_capacity(rows * x.len());
                for _ in 0..*rows {
                    data.extend_from_slice(x.data());
                }
                Tensor::new(shape, data)
            }
        }
    }

    // ---- reverse pass ----------------------------------------------------

    /// Gradient of the scalar `loss` with respect to every leaf that requires
    /// one. Leaves the loss does not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, g, &mut grads);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                if node.requires_grad {
                    if grads[i].is_none() {
                        grads[i] = Some(Tensor::zeros(node.value.shape().to_vec()));
                    }
                } else {
                    grads[i] = None;
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(vec![m, k]);
                    T::gemm(m, n, k, g.data(), false, bv.data(), true, ga.data_mut(), false);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(vec![k, n]);
                    T::gemm(k, m, n, av.data(), true, g.data(), false, gb.data_mut(), false);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (batch, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(av.shape().to_vec());
                    let gd = ga.data_mut();
                    for i in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &g.data()[i * m * n..],
                            false,
                            &bv.data()[i * k * n..],
                            true,
                            &mut gd[i * m * k..(i + 1) * m * k],
                            false,
                        );
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(bv.shape().to_vec());
                    let gd = gb.data_mut();
                    for i in 0..batch {
                        T::gemm(
                            k,
                            m,
                            n,
                            &av.data()[i * m * k..],
                            true,
                            &g.data()[i * m * n..],
                            false,
                            &mut gd[i * k * n..(i + 1) * k * n],
                            false,
                        );
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.clone());
                }
                self.accumulate(grads, *a, g);
            }
            Op::Sub(a, b) => {
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|v| -v));
                }
                self.accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, zip_map(&g, val(b), |p, q| p * q));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, zip_map(&g, val(a), |p, q| p * q));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(a), val(b));
                if self.wants(*a) {
                    self.accumulate(grads, *a, zip_map(&g, bv, |p, q| p / q));
                }
                if self.wants(*b) {
                    let data = g
                        .data()
                        .iter()
                        .zip(av.data())
                        .zip(bv.data())
                        .map(|((&gi, &x), &y)| -gi * x / (y * y))
                        .collect();
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), data).expect("div grad"));
                }
            }
            Op::AddBias(x, b) => {
                if self.wants(*b) {
                    let bv = val(b);
                    let n = bv.len();
                    let mut gb = Tensor::zeros(bv.shape().to_vec());
                    for row in g.data().chunks(n) {
                        for (acc, &v) in gb.data_mut().iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
                self.accumulate(grads, *x, g);
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|v| v * *s)),
            Op::AddScalar(a, _) => self.accumulate(grads, *a, g),
            Op::Relu(a) => {
                let gx = zip_map(&g, val(a), |gi, x| if x > T::zero() { gi } else { T::zero() });
                self.accumulate(grads, *a, gx);
            }
            Op::Abs(a) => {
                let gx = zip_map(&g, val(a), |gi, x| {
                    if x > T::zero() {
                        gi
                    } else if x < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *a, gx);
            }
            Op::Softmax { input, .. } => {
                let n = *out.shape().last().unwrap();
                let mut gx = Tensor::zeros(out.shape().to_vec());
                for ((y, gy), dst) in out.data().chunks(n).zip(g.data().chunks(n)).zip(gx.data_mut().chunks_mut(n)) {
                    let dot: T = y.iter().zip(gy).map(|(&p, &q)| p * q).sum();
                    for ((d, &p), &q) in dst.iter_mut().zip(y).zip(gy) {
                        *d = p * (q - dot);
                    }
                }
                self.accumulate(grads, *input, gx);
            }
            Op::Sum(a) => {
                let x = val(a);
                self.accumulate(grads, *a, Tensor::filled(x.shape().to_vec(), g.data()[0]));
            }
            Op::Mean(a) => {
                let x = val(a);
                let v = g.data()[0] / T::of(x.len() as f64);
                self.accumulate(grads, *a, Tensor::filled(x.shape().to_vec(), v));
            }
            Op::MeanAxis { input, axis } => {
                let x = val(input);
                let (outer, dim, inner) = split_axis(x.shape(), *axis);
                let inv = T::one() / T::of(dim as f64);
                let mut gx = Tensor::zeros(x.shape().to_vec());
                let dst = gx.data_mut();
                for o in 0..outer {
                    for d in 0..dim {
                        for i in 0..inner {
                            dst[(o * dim + d) * inner + i] = g.data()[o * inner + i] * inv;
                        }
                    }
                }
                self.accumulate(grads, *input, gx);
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let x = val(v);
                    let w = x.shape()[*axis] * inner;
                    if self.wants(*v) {
                        let mut data = Vec::with_capacity(x.len());
                        for o in 0..outer {
                            data.extend_from_slice(&g.data()[o * total + offset..o * total + offset + w]);
                        }
                        self.accumulate(grads, *v, Tensor::new(x.shape().to_vec(), data).expect("concat grad"));
                    }
                    offset += w;
                }
            }
            Op::Slice { input, axis, start, len } => {
                let x = val(input);
                let (outer, dim, inner) = split_axis(x.shape(), *axis);
                let mut gx = Tensor::zeros(x.shape().to_vec());
                let dst = gx.data_mut();
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    dst[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *input, gx);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, transpose_last2(&g)),
            Op::Reshape { input, .. } => {
                let shape = val(input).shape().to_vec();
                self.accumulate(grads, *input, g.reshaped(shape).expect("reshape grad"));
            }
            Op::StopGradient(_) => {}
            Op::GatherRows { input, index } => {
                let x = val(input);
                let w = x.row_len();
                let mut gx = Tensor::zeros(x.shape().to_vec());
                let dst = gx.data_mut();
                for (r, &i) in index.iter().enumerate() {
                    for (d, &s) in dst[i * w..(i + 1) * w].iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
                self.accumulate(grads, *input, gx);
            }
            Op::ScatterRows { input, index, .. } => {
                let x = val(input);
                let mut data = Vec::with_capacity(x.len());
                for &i in index {
                    data.extend_from_slice(g.row(i));
                }
                self.accumulate(grads, *input, Tensor::new(x.shape().to_vec(), data).expect("scatter grad"));
            }
            Op::WhereRows { mask, on, off } => {
                let w = g.row_len();
                for (target, keep_on) in [(*on, true), (*off, false)] {
                    if !self.wants(target) {
                        continue;
                    }
                    let mut gt = g.clone();
                    for (r, &m) in mask.iter().enumerate() {
                        if m != keep_on {
                            gt.data_mut()[r * w..(r + 1) * w].iter_mut().for_each(|v| *v = T::zero());
                        }
                    }
                    self.accumulate(grads, target, gt);
                }
            }
            Op::BroadcastRows { input, .. } => {
                let x = val(input);
                let mut gx = Tensor::zeros(x.shape().to_vec());
                for row in g.data().chunks(x.len()) {
                    for (d, &s) in gx.data_mut().iter_mut().zip(row) {
                        *d += s;
                    }
                }
                self.accumulate(grads, *input, gx);
            }
        }
    }
}
