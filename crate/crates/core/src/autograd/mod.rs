//! Record-on-execute reverse-mode automatic differentiation.
//!
//! A [`Tape`] owns every intermediate value of one forward computation. Each
//! operation appends a node holding its output and whatever it needs for the
//! backward pass, and returns a [`Var`] handle to that node. Calling
//! [`Tape::backward`] walks the nodes in exact reverse order of execution and
//! accumulates vector-Jacobian products into every node that requires a
//! gradient.
//!
//! Graph shape is free to vary between runs: a video with three events and
//! one with seven produce tapes of different length, which is why there is no
//! static graph here.
//!
//! ```
//! use uem::autograd::Tape;
//! use uem::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
//! let y = tape.mul(x, x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod grad_check;

use std::sync::Arc;

pub use grad_check::{grad_check, GradCheckFailure, GradCheckReport};

use crate::error::{Error, Result};
use crate::tensor::{self, matmul_raw, transpose_raw, Tensor, NORM_FLOOR};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A user-supplied elementwise-or-otherwise unary operation.
///
/// `backward` receives the input, the forward output and the upstream
/// gradient (same length as the output) and returns the gradient with
/// respect to the input.
pub trait UnaryFunction: Send + Sync {
    fn name(&self) -> &'static str;
    fn forward(&self, x: &Tensor) -> Result<Tensor>;
    fn backward(&self, x: &Tensor, y: &Tensor, grad_out: &[f64]) -> Vec<f64>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean {
        x: Var,
        axis: usize,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Cosine(Var, Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Stack(Vec<Var>),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        x: Var,
        indices: Vec<usize>,
    },
    Transpose(Var),
    MaxLastDim {
        x: Var,
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Index {
        x: Var,
        index: usize,
    },
    Custom {
        x: Var,
        f: Arc<dyn UnaryFunction>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Linear record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    requires_grad: Vec<bool>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`.
    ///
    /// `Some` iff `var` requires a gradient; nodes that do not influence the
    /// loss get a zero tensor.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        if !self.requires_grad[var.0] {
            return None;
        }
        let shape = self.shapes[var.0].clone();
        Some(match &self.grads[var.0] {
            Some(g) => Tensor::from_parts(shape, g.clone()),
            None => Tensor::zeros(shape),
        })
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf that accumulates gradients.
    pub fn param(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value.into(), true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value.into(), false)
    }

    pub fn leaf(&mut self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match *self.shape(v) {
            [m, n] => Ok((m, n)),
            ref s => Err(Error::Shape {
                op,
                detail: format!("expected a matrix, got shape {s:?}"),
            }),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), &[a, b])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(name, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Tensor::from_parts(x.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |p, q| p + q)?;
        self.push("add", t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |p, q| p - q)?;
        self.push("sub", t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |p, q| p * q)?;
        self.push("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("div", a, b, |p, q| p / q)?;
        self.push("div", t, Op::Div(a, b), &[a, b])
    }

    /// Adds a vector to every row of `x` (`x[..., n] + b[n]`).
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).cols();
        if self.shape(b) != [n] || self.value(x).rank() == 0 {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bias = self.value(b).data();
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bias[i % n])
            .collect();
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("add_row", t, Op::AddRow(x, b), &[x, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v * c);
        self.push("scale", t, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v + c);
        self.push("add_scalar", t, Op::AddScalar(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(|v| v.max(0.0));
        self.push("relu", t, Op::Relu(x), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(f64::exp);
        self.push("exp", t, Op::Exp(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(v) = self.value(x).data().iter().find(|&&v| v <= 0.0) {
            return Err(Error::Domain(format!("log of nonpositive value {v}")));
        }
        let t = self.value(x).map(f64::ln);
        self.push("log", t, Op::Log(x), &[x])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean along `axis`, removing that axis.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::Shape {
                op: "mean",
                detail: format!("cannot average axis {axis} of shape {shape:?}"),
            });
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let len = shape[axis];
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push("mean", Tensor::from_parts(out_shape, out), Op::Mean { x, axis }, &[x])
    }

    /// Softmax over the last axis, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() == 0 || xv.cols() == 0 {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: xv.shape().to_vec(),
                rhs: vec![],
            });
        }
        let n = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("softmax", t, Op::Softmax(x), &[x])
    }

    /// Layer normalization over the last axis with an affine transform.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if xv.rank() == 0 || d == 0 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(Error::Parameter(format!("layer_norm eps must be positive, got {eps}")));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.rows();
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), out);
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Cosine similarity of two tensors with the same element count, as a
    /// scalar. Operands with norm at or below [`NORM_FLOOR`] are rejected.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.numel() != bv.numel() || av.numel() == 0 {
            return Err(Error::Dimension {
                op: "cosine",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (na, nb) = (tensor::norm(av.data()), tensor::norm(bv.data()));
        if na <= NORM_FLOOR || nb <= NORM_FLOOR {
            let which = if na <= NORM_FLOOR { "left" } else { "right" };
            return Err(tensor::degenerate(format!("cosine {which} operand"), na.min(nb)));
        }
        let c = tensor::dot(av.data(), bv.data()) / (na * nb);
        self.push("cosine", Tensor::scalar(c), Op::Cosine(a, b), &[a, b])
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(Error::Shape {
            op: "concat",
            detail: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape {
                op: "concat",
                detail: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::from_parts(shape, data);
        self.push(
            "concat",
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Shape {
            op: "stack",
            detail: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(*first).numel());
        for &p in parts {
            if self.shape(p) != base.as_slice() {
                return Err(Error::Dimension {
                    op: "stack",
                    lhs: base,
                    rhs: self.shape(p).to_vec(),
                });
            }
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&base);
        let t = Tensor::from_parts(shape, data);
        self.push("stack", t, Op::Stack(parts.to_vec()), parts)
    }

    /// Takes `len` consecutive entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::Shape {
                op: "slice",
                detail: format!("range {start}..{} on axis {axis} of shape {shape:?}", start + len),
            });
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[off..off + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::from_parts(out_shape, data);
        self.push("slice", t, Op::Slice { x, axis, start }, &[x])
    }

    /// Selects rows of a matrix by index; duplicates are allowed.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let (m, _) = self.matrix_dims("gather_rows", x)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::Shape {
                op: "gather_rows",
                detail: format!("row {bad} out of range for {m} rows"),
            });
        }
        if indices.is_empty() {
            return Err(Error::Shape {
                op: "gather_rows",
                detail: "empty index list".into(),
            });
        }
        let t = self.value(x).select_rows(indices);
        self.push(
            "gather_rows",
            t,
            Op::GatherRows {
                x,
                indices: indices.to_vec(),
            },
            &[x],
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("transpose", x)?;
        let data = transpose_raw(self.value(x).data(), m, n);
        self.push("transpose", Tensor::from_parts(vec![n, m], data), Op::Transpose(x), &[x])
    }

    /// Maximum over the last axis. The gradient flows to the first maximal
    /// entry of each slice.
    pub fn max_lastdim(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() == 0 || xv.cols() == 0 {
            return Err(Error::Dimension {
                op: "max_lastdim",
                lhs: xv.shape().to_vec(),
                rhs: vec![],
            });
        }
        let n = xv.cols();
        let mut argmax = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.rows());
        for row in xv.data().chunks(n) {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            argmax.push(best);
            out.push(row[best]);
        }
        let shape = xv.shape()[..xv.rank() - 1].to_vec();
        let t = Tensor::from_parts(shape, out);
        self.push("max_lastdim", t, Op::MaxLastDim { x, argmax }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    /// Extracts one element (by flat row-major index) as a scalar.
    pub fn index(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        if index >= xv.numel() {
            return Err(Error::Shape {
                op: "index",
                detail: format!("flat index {index} out of range for shape {:?}", xv.shape()),
            });
        }
        let t = Tensor::scalar(xv.data()[index]);
        self.push("index", t, Op::Index { x, index }, &[x])
    }

    pub fn custom(&mut self, x: Var, f: Arc<dyn UnaryFunction>) -> Result<Var> {
        let t = f.forward(self.value(x))?;
        let name = f.name();
        self.push(name, t, Op::Custom { x, f }, &[x])
    }

    /// Back-propagates from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be a single element, got shape {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            requires_grad: self.nodes.iter().map(|n| n.requires_grad).collect(),
        })
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                acc(*a, &mut |s| {
                    let bt = transpose_raw(val(*b), k, n);
                    let da = matmul_raw(g, &bt, m, n, k);
                    s.iter_mut().zip(da).for_each(|(x, d)| *x += d);
                });
                acc(*b, &mut |s| {
                    let at = transpose_raw(val(*a), m, k);
                    let db = matmul_raw(&at, g, k, m, n);
                    s.iter_mut().zip(db).for_each(|(x, d)| *x += d);
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += g[i] * bv[i];
                    }
                });
                acc(*b, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += g[i] * av[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += g[i] / bv[i];
                    }
                });
                acc(*b, &mut |s| {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x -= g[i] * av[i] / (bv[i] * bv[i]);
                    }
                });
            }
            Op::AddRow(x, b) => {
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d));
                let n = self.shape(*b)[0];
                acc(*b, &mut |s| {
                    for (i, d) in g.iter().enumerate() {
                        s[i % n] += d;
                    }
                });
            }
            Op::Scale(x, c) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += c * d)),
            Op::AddScalar(x) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d)),
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for (i, v) in s.iter_mut().enumerate() {
                        if xv[i] > 0.0 {
                            *v += g[i];
                        }
                    }
                });
            }
            Op::Exp(x) => acc(*x, &mut |s| {
                for (i, v) in s.iter_mut().enumerate() {
                    *v += g[i] * out[i];
                }
            }),
            Op::Log(x) => {
                let xv = val(*x);
                acc(*x, &mut |s| {
                    for (i, v) in s.iter_mut().enumerate() {
                        *v += g[i] / xv[i];
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean { x, axis } => {
                let shape = self.shape(*x);
                let (outer, inner) = outer_inner(shape, *axis);
                let len = shape[*axis];
                let inv = 1.0 / len as f64;
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for a in 0..len {
                            for i in 0..inner {
                                s[(o * len + a) * inner + i] += g[o * inner + i] * inv;
                            }
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let n = node.value.cols();
                acc(*x, &mut |s| {
                    for ((srow, grow), yrow) in s.chunks_mut(n).zip(g.chunks(n)).zip(out.chunks(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            srow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = node.value.cols();
                let gam = val(*gamma);
                acc(*gamma, &mut |s| {
                    for (i, (gv, h)) in g.iter().zip(xhat).enumerate() {
                        s[i % d] += gv * h;
                    }
                });
                acc(*beta, &mut |s| {
                    for (i, gv) in g.iter().enumerate() {
                        s[i % d] += gv;
                    }
                });
                acc(*x, &mut |s| {
                    for (r, ((srow, grow), hrow)) in
                        s.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate()
                    {
                        let dh: Vec<f64> = grow.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h = dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            srow[j] += rstd[r] * (dh[j] - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::Cosine(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (na, nb) = (tensor::norm(av), tensor::norm(bv));
                let c = out[0];
                let gs = g[0];
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += gs * (bv[i] / (na * nb) - c * av[i] / (na * na));
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += gs * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, inner) = outer_inner(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis] * inner;
                    acc(p, &mut |s| {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + len];
                            s[o * len..(o + 1) * len].iter_mut().zip(src).for_each(|(x, d)| *x += d);
                        }
                    });
                    offset += len;
                }
            }
            Op::Stack(parts) => {
                let len = self.nodes[parts[0].0].value.numel();
                for (k, &p) in parts.iter().enumerate() {
                    acc(p, &mut |s| {
                        s.iter_mut().zip(&g[k * len..(k + 1) * len]).for_each(|(x, d)| *x += d);
                    });
                }
            }
            Op::Slice { x, axis, start } => {
                let in_shape = self.shape(*x);
                let (outer, inner) = outer_inner(in_shape, *axis);
                let len = node.value.shape()[*axis];
                let full = in_shape[*axis];
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        let off = (o * full + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        s[off..off + len * inner].iter_mut().zip(src).for_each(|(x, d)| *x += d);
                    }
                });
            }
            Op::GatherRows { x, indices } => {
                let c = node.value.cols();
                acc(*x, &mut |s| {
                    for (k, &row) in indices.iter().enumerate() {
                        let src = &g[k * c..(k + 1) * c];
                        s[row * c..(row + 1) * c].iter_mut().zip(src).for_each(|(x, d)| *x += d);
                    }
                });
            }
            Op::Transpose(x) => {
                let (m, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                acc(*x, &mut |s| {
                    let gt = transpose_raw(g, n, m);
                    s.iter_mut().zip(gt).for_each(|(x, d)| *x += d);
                });
            }
            Op::MaxLastDim { x, argmax } => {
                let n = self.nodes[x.0].value.cols();
                acc(*x, &mut |s| {
                    for (r, &j) in argmax.iter().enumerate() {
                        s[r * n + j] += g[r];
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d)),
            Op::Index { x, index } => acc(*x, &mut |s| s[*index] += g[0]),
            Op::Custom { x, f } => {
                let dx = f.backward(&self.nodes[x.0].value, &node.value, g);
                acc(*x, &mut |s| s.iter_mut().zip(&dx).for_each(|(x, d)| *x += d));
            }
        }
    }
}
