//! Dynamically recorded computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and scatter-adds partials into the inputs. A tape
//! is single-threaded (interior mutability through `RefCell`), so one tape per
//! document or per worker.

use std::cell::{Ref, RefCell};

use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::{
    axis_extents, broadcast_index_map, broadcast_shape, reduced_shape, Tensor,
};
use crate::numerics::TensorError;
use crate::scalar::Real;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum Unary<T> {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(T),
    Abs,
    Exp,
    Ln,
    Sqrt,
    Neg,
    Scale(T),
    AddScalar(T),
}

#[derive(Debug)]
enum Op<T> {
    Leaf(Option<ParamId>),
    Binary(Binary, Var, Var),
    Unary(Unary<T>, Var),
    MatMul(Var, Var),
    Transpose(Var),
    SumAll(Var),
    Sum(Var, usize),
    Mean(Var, usize),
    Max(Var, Vec<usize>),
    LogSumExp(Var, usize),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Gather(Var, Vec<usize>),
    Stack(Vec<Var>),
    PadRows(Var),
    Reshape(Var),
    ScatterAdd(Var, Vec<usize>, Var),
    Cosine(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations for one forward pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

type OpResult = Result<Var, TensorError>;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = match &op {
            Op::Leaf(_) => false,
            other => op_inputs(other).iter().any(|v| nodes[v.0].needs_grad),
        };
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(nodes.len() - 1)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf(None))
    }

    /// A free input leaf; with `requires_grad` its gradient is reported by
    /// [`Gradients::wrt`].
    pub fn input(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let v = self.push(value, Op::Leaf(None));
        self.nodes.borrow_mut()[v.0].needs_grad = requires_grad;
        v
    }

    /// Binds a trainable parameter; gradients flow back into `store` through
    /// [`Gradients::accumulate_into`].
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.get(id).value.clone(), Op::Leaf(Some(id)));
        self.nodes.borrow_mut()[v.0].needs_grad = true;
        v
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    // ---- elementwise ----

    fn binary(&self, kind: Binary, a: Var, b: Var, name: &'static str) -> OpResult {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let shape = broadcast_shape(x.shape(), y.shape()).ok_or_else(|| {
                TensorError::ShapeMismatch {
                    op: name,
                    left: x.shape().to_vec(),
                    right: y.shape().to_vec(),
                }
            })?;
            let f = |p: T, q: T| match kind {
                Binary::Add => p + q,
                Binary::Sub => p - q,
                Binary::Mul => p * q,
                Binary::Div => p / q,
            };
            let data: Vec<T> = if x.shape() == y.shape() {
                x.data()
                    .iter()
                    .zip(y.data())
                    .map(|(&p, &q)| f(p, q))
                    .collect()
            } else {
                let mx = broadcast_index_map(x.shape(), &shape);
                let my = broadcast_index_map(y.shape(), &shape);
                mx.iter()
                    .zip(&my)
                    .map(|(&i, &j)| f(x.data()[i], y.data()[j]))
                    .collect()
            };
            Tensor::new(shape, data)?
        };
        Ok(self.push(value, Op::Binary(kind, a, b)))
    }

    pub fn add(&self, a: Var, b: Var) -> OpResult {
        self.binary(Binary::Add, a, b, "add")
    }

    pub fn sub(&self, a: Var, b: Var) -> OpResult {
        self.binary(Binary::Sub, a, b, "sub")
    }

    pub fn mul(&self, a: Var, b: Var) -> OpResult {
        self.binary(Binary::Mul, a, b, "mul")
    }

    pub fn div(&self, a: Var, b: Var) -> OpResult {
        self.binary(Binary::Div, a, b, "div")
    }

    fn unary(&self, kind: Unary<T>, a: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.0].value.map(|x| match kind {
                Unary::Sigmoid => sigmoid(x),
                Unary::Tanh => x.tanh(),
                Unary::Relu => {
                    if x.is_nan() {
                        x
                    } else {
                        x.max(T::zero())
                    }
                }
                Unary::LeakyRelu(s) => {
                    if x > T::zero() {
                        x
                    } else {
                        s * x
                    }
                }
                Unary::Abs => x.abs(),
                Unary::Exp => x.exp(),
                Unary::Ln => x.ln(),
                Unary::Sqrt => x.sqrt(),
                Unary::Neg => -x,
                Unary::Scale(c) => c * x,
                Unary::AddScalar(c) => x + c,
            })
        };
        self.push(value, Op::Unary(kind, a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    /// `max(0, x)`; the hinge of the margin loss.
    pub fn max_with_zero(&self, a: Var) -> Var {
        self.relu(a)
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        self.unary(Unary::LeakyRelu(slope), a)
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(Unary::Abs, a)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(Unary::Ln, a)
    }

    pub fn sqrt(&self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }

    pub fn scale(&self, a: Var, c: T) -> Var {
        self.unary(Unary::Scale(c), a)
    }

    pub fn add_scalar(&self, a: Var, c: T) -> Var {
        self.unary(Unary::AddScalar(c), a)
    }

    // ---- linear algebra ----

    /// Matrix product. A rank-1 left operand is a row vector, a rank-1 right
    /// operand a column vector; the corresponding output axis is dropped.
    pub fn matmul(&self, a: Var, b: Var) -> OpResult {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = as_left(x.shape()).ok_or_else(|| mm_err(x, y))?;
            let (k2, n) = as_right(y.shape()).ok_or_else(|| mm_err(x, y))?;
            if k != k2 {
                return Err(mm_err(x, y));
            }
            let mut out = vec![T::zero(); m * n];
            gemm(x.data(), y.data(), &mut out, m, k, n);
            let shape = match (x.rank(), y.rank()) {
                (1, 1) => vec![1],
                (1, _) => vec![n],
                (_, 1) => vec![m],
                _ => vec![m, n],
            };
            Tensor::new(shape, out)?
        };
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&self, a: Var) -> OpResult {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if x.rank() != 2 {
                return Err(TensorError::RankMismatch {
                    op: "transpose",
                    expected: 2,
                    got: x.rank(),
                });
            }
            let (r, c) = (x.shape()[0], x.shape()[1]);
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = x.data()[i * c + j];
                }
            }
            Tensor::new([c, r], out)?
        };
        Ok(self.push(value, Op::Transpose(a)))
    }

    /// Cosine similarity of two equal-length vectors; 0 when either is zero.
    pub fn cosine(&self, a: Var, b: Var) -> OpResult {
        let value = {
            let nodes = self.nodes.borrow();
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            if x.numel() != y.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "cosine",
                    left: x.shape().to_vec(),
                    right: y.shape().to_vec(),
                });
            }
            let (dot, na, nb) = cosine_parts(x.data(), y.data());
            let c = if na == T::zero() || nb == T::zero() {
                T::zero()
            } else {
                dot / (na * nb)
            };
            Tensor::scalar(c)
        };
        Ok(self.push(value, Op::Cosine(a, b)))
    }

    // ---- reductions ----

    pub fn sum(&self, a: Var) -> Var {
        let s = self.nodes.borrow()[a.0].value.data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    fn check_axis(&self, a: Var, axis: usize, op: &'static str) -> Result<(), TensorError> {
        let rank = self.nodes.borrow()[a.0].value.rank();
        if axis >= rank {
            return Err(TensorError::AxisOutOfRange { op, axis, rank });
        }
        Ok(())
    }

    fn reduce_axis(&self, a: Var, axis: usize, f: impl Fn(&[T]) -> T) -> Tensor<T> {
        let nodes = self.nodes.borrow();
        let x = &nodes[a.0].value;
        let (outer, len, inner) = axis_extents(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * inner);
        let mut lane = vec![T::zero(); len];
        for o in 0..outer {
            for i in 0..inner {
                for (k, slot) in lane.iter_mut().enumerate() {
                    *slot = x.data()[(o * len + k) * inner + i];
                }
                out.push(f(&lane));
            }
        }
        Tensor::new(reduced_shape(x.shape(), axis), out).expect("reduced shape")
    }

    pub fn sum_axis(&self, a: Var, axis: usize) -> OpResult {
        self.check_axis(a, axis, "sum")?;
        let v = self.reduce_axis(a, axis, |l| l.iter().copied().sum());
        Ok(self.push(v, Op::Sum(a, axis)))
    }

    pub fn mean_axis(&self, a: Var, axis: usize) -> OpResult {
        self.check_axis(a, axis, "mean")?;
        let v = self.reduce_axis(a, axis, |l| {
            l.iter().copied().sum::<T>() / T::from_count(l.len())
        });
        Ok(self.push(v, Op::Mean(a, axis)))
    }

    pub fn max_axis(&self, a: Var, axis: usize) -> OpResult {
        self.check_axis(a, axis, "max")?;
        let (value, argmax) = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let (outer, len, inner) = axis_extents(x.shape(), axis);
            let mut out = Vec::with_capacity(outer * inner);
            let mut arg = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = (o * len) * inner + i;
                    for k in 1..len {
                        let idx = (o * len + k) * inner + i;
                        if x.data()[idx] > x.data()[best] {
                            best = idx;
                        }
                    }
                    out.push(x.data()[best]);
                    arg.push(best);
                }
            }
            (Tensor::new(reduced_shape(x.shape(), axis), out)?, arg)
        };
        Ok(self.push(value, Op::Max(a, argmax)))
    }

    /// Max-shifted log-sum-exp along `axis`.
    pub fn logsumexp(&self, a: Var, axis: usize) -> OpResult {
        self.check_axis(a, axis, "logsumexp")?;
        let v = self.reduce_axis(a, axis, logsumexp_lane);
        Ok(self.push(v, Op::LogSumExp(a, axis)))
    }

    pub fn softmax(&self, a: Var, axis: usize) -> OpResult {
        self.check_axis(a, axis, "softmax")?;
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let (outer, len, inner) = axis_extents(x.shape(), axis);
            let mut out = vec![T::zero(); x.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * len + k) * inner + i;
                    let m = (0..len)
                        .map(|k| x.data()[at(k)])
                        .fold(T::neg_infinity(), T::max);
                    let mut z = T::zero();
                    for k in 0..len {
                        let e = (x.data()[at(k)] - m).exp();
                        out[at(k)] = e;
                        z += e;
                    }
                    for k in 0..len {
                        out[at(k)] /= z;
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), out)?
        };
        Ok(self.push(value, Op::Softmax(a, axis)))
    }

    // ---- structural ----

    pub fn concat(&self, parts: &[Var], axis: usize) -> OpResult {
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts.first().ok_or(TensorError::Empty("concat"))?.0].value;
            if axis >= first.rank() {
                return Err(TensorError::AxisOutOfRange {
                    op: "concat",
                    axis,
                    rank: first.rank(),
                });
            }
            let mut shape = first.shape().to_vec();
            shape[axis] = 0;
            for p in parts {
                let s = nodes[p.0].value.shape();
                let compatible = s.len() == shape.len()
                    && s.iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(d, (x, y))| d == axis || x == y);
                if !compatible {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        left: first.shape().to_vec(),
                        right: s.to_vec(),
                    });
                }
                shape[axis] += s[axis];
            }
            let (outer, _, inner) = axis_extents(&shape, axis);
            let mut out = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for p in parts {
                    let x = &nodes[p.0].value;
                    let chunk = x.shape()[axis] * inner;
                    out.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Tensor::new(shape, out)?
        };
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis)))
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, end: usize) -> OpResult {
        self.check_axis(a, axis, "slice")?;
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            let (outer, len, inner) = axis_extents(x.shape(), axis);
            if start >= end || end > len {
                return Err(TensorError::IndexOutOfRange {
                    op: "slice",
                    index: end,
                    len,
                });
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = end - start;
            let mut out = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                out.extend_from_slice(
                    &x.data()[(o * len + start) * inner..(o * len + end) * inner],
                );
            }
            Tensor::new(shape, out)?
        };
        Ok(self.push(value, Op::Slice(a, axis, start)))
    }

    /// Row `i` of a matrix as a vector (or element `i` of a vector as `[1]`).
    pub fn row(&self, a: Var, i: usize) -> OpResult {
        let s = self.slice(a, 0, i, i + 1)?;
        let shape = self.shape(s);
        if shape.len() == 1 {
            Ok(s)
        } else {
            self.reshape(s, shape[1..].to_vec())
        }
    }

    /// Selects rows along axis 0; repeated indices duplicate rows.
    pub fn gather(&self, a: Var, rows: &[usize]) -> OpResult {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if rows.is_empty() {
                return Err(TensorError::Empty("gather"));
            }
            let n = x.rows();
            let width = x.numel() / n;
            let mut out = Vec::with_capacity(rows.len() * width);
            for &r in rows {
                if r >= n {
                    return Err(TensorError::IndexOutOfRange {
                        op: "gather",
                        index: r,
                        len: n,
                    });
                }
                out.extend_from_slice(&x.data()[r * width..(r + 1) * width]);
            }
            let mut shape = x.shape().to_vec();
            shape[0] = rows.len();
            Tensor::new(shape, out)?
        };
        Ok(self.push(value, Op::Gather(a, rows.to_vec())))
    }

    /// Stacks equal-shaped tensors along a new leading axis.
    pub fn stack(&self, parts: &[Var]) -> OpResult {
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts.first().ok_or(TensorError::Empty("stack"))?.0].value;
            let mut out = Vec::with_capacity(first.numel() * parts.len());
            for p in parts {
                let x = &nodes[p.0].value;
                if x.shape() != first.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "stack",
                        left: first.shape().to_vec(),
                        right: x.shape().to_vec(),
                    });
                }
                out.extend_from_slice(x.data());
            }
            let mut shape = vec![parts.len()];
            shape.extend_from_slice(first.shape());
            Tensor::new(shape, out)?
        };
        Ok(self.push(value, Op::Stack(parts.to_vec())))
    }

    /// Appends zero rows along axis 0 until there are `length` rows.
    pub fn zero_pad_to(&self, a: Var, length: usize) -> OpResult {
        let value = {
            let nodes = self.nodes.borrow();
            let x = &nodes[a.0].value;
            if x.rows() > length {
                return Err(TensorError::IndexOutOfRange {
                    op: "zero_pad_to",
                    index: x.rows(),
                    len: length,
                });
            }
            let width = x.numel() / x.rows();
            let mut out = x.data().to_vec();
            out.resize(length * width, T::zero());
            let mut shape = x.shape().to_vec();
            shape[0] = length;
            Tensor::new(shape, out)?
        };
        Ok(self.push(value, Op::PadRows(a)))
    }

    pub fn reshape(&self, a: Var, shape: impl Into<Vec<usize>>) -> OpResult {
        let value = self.nodes.borrow()[a.0].value.clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(a)))
    }

    pub fn flatten(&self, a: Var) -> OpResult {
        let n = self.nodes.borrow()[a.0].value.numel();
        self.reshape(a, [n])
    }

    /// `base` with `values[j]` added at flat position `indices[j]`.
    pub fn scatter_add(&self, base: Var, indices: &[usize], values: Var) -> OpResult {
        let value = {
            let nodes = self.nodes.borrow();
            let (b, v) = (&nodes[base.0].value, &nodes[values.0].value);
            if v.numel() != indices.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "scatter_add",
                    left: vec![indices.len()],
                    right: v.shape().to_vec(),
                });
            }
            let mut out = b.clone();
            for (&i, &x) in indices.iter().zip(v.data()) {
                if i >= b.numel() {
                    return Err(TensorError::IndexOutOfRange {
                        op: "scatter_add",
                        index: i,
                        len: b.numel(),
                    });
                }
                out.data_mut()[i] += x;
            }
            out
        };
        Ok(self.push(value, Op::ScatterAdd(base, indices.to_vec(), values)))
    }

    // ---- reverse pass ----

    /// Computes d(loss)/d(node) for every node that depends on a
    /// gradient-requiring leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.0].value.shape().to_vec();
        if nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(&nodes, &mut grads, node, &g);
            grads[i] = Some(g);
        }
        let mut params = Vec::new();
        let mut shapes = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            shapes.push(n.value.shape().to_vec());
            if let Op::Leaf(Some(id)) = n.op {
                params.push((i, id));
            }
        }
        Ok(Gradients {
            grads,
            shapes,
            params,
        })
    }
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
    params: Vec<(usize, ParamId)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; `None` if `v` did not participate.
    pub fn wrt(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shapes[v.0].clone(), g.clone()).ok()
    }

    /// Adds parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                for (acc, &x) in store.get_mut(id).grad.iter_mut().zip(g) {
                    *acc += x;
                }
            }
        }
    }
}

fn op_inputs<T>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf(_) => vec![],
        Op::Binary(_, a, b) | Op::MatMul(a, b) | Op::Cosine(a, b) | Op::ScatterAdd(a, _, b) => {
            vec![*a, *b]
        }
        Op::Unary(_, a)
        | Op::Transpose(a)
        | Op::SumAll(a)
        | Op::Sum(a, _)
        | Op::Mean(a, _)
        | Op::Max(a, _)
        | Op::LogSumExp(a, _)
        | Op::Softmax(a, _)
        | Op::Slice(a, _, _)
        | Op::Gather(a, _)
        | Op::PadRows(a)
        | Op::Reshape(a) => vec![*a],
        Op::Concat(parts, _) | Op::Stack(parts) => parts.clone(),
    }
}

/// Zero-initialised gradient buffer for `v`, or `None` if `v` takes no gradient.
fn slot<'g, T: Real>(
    nodes: &[Node<T>],
    grads: &'g mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'g mut Vec<T>> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].value.numel();
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
}

fn propagate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], node: &Node<T>, g: &[T]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf(_) => {}
        Op::Binary(kind, a, b) => {
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let mx = broadcast_index_map(x.shape(), out.shape());
            let my = broadcast_index_map(y.shape(), out.shape());
            if let Some(ga) = slot(nodes, grads, *a) {
                for k in 0..g.len() {
                    let q = y.data()[my[k]];
                    ga[mx[k]] += match kind {
                        Binary::Add | Binary::Sub => g[k],
                        Binary::Mul => g[k] * q,
                        Binary::Div => g[k] / q,
                    };
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for k in 0..g.len() {
                    let (p, q) = (x.data()[mx[k]], y.data()[my[k]]);
                    gb[my[k]] += match kind {
                        Binary::Add => g[k],
                        Binary::Sub => -g[k],
                        Binary::Mul => g[k] * p,
                        Binary::Div => -g[k] * p / (q * q),
                    };
                }
            }
        }
        Op::Unary(kind, a) => {
            let x = &nodes[a.0].value;
            if let Some(ga) = slot(nodes, grads, *a) {
                for k in 0..g.len() {
                    let (xi, yi) = (x.data()[k], out.data()[k]);
                    let d = match *kind {
                        Unary::Sigmoid => yi * (T::one() - yi),
                        Unary::Tanh => T::one() - yi * yi,
                        Unary::Relu => {
                            if xi > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::LeakyRelu(s) => {
                            if xi > T::zero() {
                                T::one()
                            } else {
                                s
                            }
                        }
                        Unary::Abs => {
                            if xi > T::zero() {
                                T::one()
                            } else if xi < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Exp => yi,
                        Unary::Ln => T::one() / xi,
                        Unary::Sqrt => T::lit(0.5) / yi,
                        Unary::Neg => -T::one(),
                        Unary::Scale(c) => c,
                        Unary::AddScalar(_) => T::one(),
                    };
                    ga[k] += g[k] * d;
                }
            }
        }
        Op::MatMul(a, b) => {
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = as_left(x.shape()).expect("checked in forward");
            let (_, n) = as_right(y.shape()).expect("checked in forward");
            if let Some(ga) = slot(nodes, grads, *a) {
                // ga[m×k] += g[m×n] · yᵀ
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == T::zero() {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gij * y.data()[p * n + j];
                        }
                    }
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                // gb[k×n] += xᵀ · g
                for i in 0..m {
                    for p in 0..k {
                        let xip = x.data()[i * k + p];
                        if xip == T::zero() {
                            continue;
                        }
                        let row = &g[i * n..(i + 1) * n];
                        let dst = &mut gb[p * n..(p + 1) * n];
                        for (d, &gv) in dst.iter_mut().zip(row) {
                            *d += xip * gv;
                        }
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (out.shape()[1], out.shape()[0]);
            if let Some(ga) = slot(nodes, grads, *a) {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Cosine(a, b) => {
            let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
            let (_, na, nb) = cosine_parts(x.data(), y.data());
            if na == T::zero() || nb == T::zero() {
                return;
            }
            let c = out.item();
            let g0 = g[0];
            if let Some(ga) = slot(nodes, grads, *a) {
                for k in 0..ga.len() {
                    ga[k] += g0 * (y.data()[k] / (na * nb) - c * x.data()[k] / (na * na));
                }
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                for k in 0..gb.len() {
                    gb[k] += g0 * (x.data()[k] / (na * nb) - c * y.data()[k] / (nb * nb));
                }
            }
        }
        Op::SumAll(a) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for v in ga.iter_mut() {
                    *v += g[0];
                }
            }
        }
        Op::Sum(a, axis) | Op::Mean(a, axis) => {
            let x = &nodes[a.0].value;
            let (outer, len, inner) = axis_extents(x.shape(), *axis);
            let scale = match node.op {
                Op::Mean(..) => T::one() / T::from_count(len),
                _ => T::one(),
            };
            if let Some(ga) = slot(nodes, grads, *a) {
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            ga[(o * len + k) * inner + i] += g[o * inner + i] * scale;
                        }
                    }
                }
            }
        }
        Op::Max(a, argmax) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                for (j, &src) in argmax.iter().enumerate() {
                    ga[src] += g[j];
                }
            }
        }
        Op::LogSumExp(a, axis) => {
            let x = &nodes[a.0].value;
            let (outer, len, inner) = axis_extents(x.shape(), *axis);
            if let Some(ga) = slot(nodes, grads, *a) {
                for o in 0..outer {
                    for i in 0..inner {
                        let y = out.data()[o * inner + i];
                        for k in 0..len {
                            let idx = (o * len + k) * inner + i;
                            ga[idx] += g[o * inner + i] * (x.data()[idx] - y).exp();
                        }
                    }
                }
            }
        }
        Op::Softmax(a, axis) => {
            let (outer, len, inner) = axis_extents(out.shape(), *axis);
            if let Some(ga) = slot(nodes, grads, *a) {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * len + k) * inner + i;
                        let dot: T = (0..len).map(|k| g[at(k)] * out.data()[at(k)]).sum();
                        for k in 0..len {
                            ga[at(k)] += out.data()[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
            }
        }
        Op::Concat(parts, axis) => {
            let (outer, total, inner) = axis_extents(out.shape(), *axis);
            let mut offset = 0;
            for p in parts {
                let len = nodes[p.0].value.shape()[*axis];
                if let Some(gp) = slot(nodes, grads, *p) {
                    for o in 0..outer {
                        let src =
                            &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        let dst = &mut gp[o * len * inner..(o + 1) * len * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Slice(a, axis, start) => {
            let x = &nodes[a.0].value;
            let (outer, len, inner) = axis_extents(x.shape(), *axis);
            let width = out.shape()[*axis];
            if let Some(ga) = slot(nodes, grads, *a) {
                for o in 0..outer {
                    let dst = &mut ga[(o * len + start) * inner..(o * len + start + width) * inner];
                    let src = &g[o * width * inner..(o + 1) * width * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
        Op::Gather(a, rows) => {
            let x = &nodes[a.0].value;
            let width = x.numel() / x.rows();
            if let Some(ga) = slot(nodes, grads, *a) {
                for (j, &r) in rows.iter().enumerate() {
                    for c in 0..width {
                        ga[r * width + c] += g[j * width + c];
                    }
                }
            }
        }
        Op::Stack(parts) => {
            let width = out.numel() / parts.len();
            for (j, p) in parts.iter().enumerate() {
                if let Some(gp) = slot(nodes, grads, *p) {
                    for c in 0..width {
                        gp[c] += g[j * width + c];
                    }
                }
            }
        }
        Op::PadRows(a) | Op::Reshape(a) => {
            if let Some(ga) = slot(nodes, grads, *a) {
                let n = ga.len();
                for (d, &s) in ga.iter_mut().zip(&g[..n]) {
                    *d += s;
                }
            }
        }
        Op::ScatterAdd(base, indices, values) => {
            if let Some(gb) = slot(nodes, grads, *base) {
                for (d, &s) in gb.iter_mut().zip(g) {
                    *d += s;
                }
            }
            if let Some(gv) = slot(nodes, grads, *values) {
                for (j, &i) in indices.iter().enumerate() {
                    gv[j] += g[i];
                }
            }
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn logsumexp_lane<T: Real>(lane: &[T]) -> T {
    let m = lane.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + lane.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

fn cosine_parts<T: Real>(x: &[T], y: &[T]) -> (T, T, T) {
    let dot = x.iter().zip(y).map(|(&a, &b)| a * b).sum::<T>();
    let na = x.iter().map(|&a| a * a).sum::<T>().sqrt();
    let nb = y.iter().map(|&b| b * b).sum::<T>().sqrt();
    (dot, na, nb)
}

fn as_left(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [k] => Some((1, *k)),
        [m, k] => Some((*m, *k)),
        _ => None,
    }
}

fn as_right(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [k] => Some((*k, 1)),
        [k, n] => Some((*k, *n)),
        _ => None,
    }
}

fn mm_err<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> TensorError {
    TensorError::ShapeMismatch {
        op: "matmul",
        left: x.shape().to_vec(),
        right: y.shape().to_vec(),
    }
}

fn gemm<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let row = &b[p * n..(p + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(row) {
                *d += aip * bv;
            }
        }
    }
}

/// Every parameter of a store bound onto one tape, indexable by [`ParamId`].
pub struct Bound(Vec<Var>);

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl<T: Real> Tape<T> {
    pub fn bind_all(&self, store: &ParamStore<T>) -> Bound {
        Bound(store.ids().map(|id| self.param(store, id)).collect())
    }
}
