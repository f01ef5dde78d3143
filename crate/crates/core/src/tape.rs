//! Reverse-mode gradient tape.
//!
//! Every forward operation appends its output to the tape and, when
//! recording, a node describing how to push gradients back to its inputs.
//! Nodes are appended in execution order, so replaying them backwards is a
//! valid reverse topological order.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::ops::activation::Activation;
use crate::ops::conv::{self, ConvSpec};
use crate::ops::linear::{self, matmul_into, matmul_nt_into, matmul_tn_into};
use crate::ops::norm::{self, NormCache};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value stored on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Linear { has_bias: bool },
    MatMul,
    MatMulNt,
    Conv1d { spec: ConvSpec, has_bias: bool },
    ConvTransposed { stride: usize, has_bias: bool },
    LayerNorm(NormCache<T>),
    Act(Activation),
    Softmax,
    Add,
    Scale(T),
    SliceCols { start: usize },
    SliceRows { start: usize },
    ConcatCols,
    GatherRows(Vec<usize>),
    AbsErrorSum(Vec<T>),
    SquaredErrorSum(Vec<T>),
    Reshape,
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Linear { .. } => "linear",
            Op::MatMul => "matmul",
            Op::MatMulNt => "matmul_nt",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvTransposed { .. } => "conv1d_transposed",
            Op::LayerNorm(_) => "layer_norm",
            Op::Act(Activation::Gelu) => "gelu",
            Op::Act(Activation::Relu) => "relu",
            Op::Act(Activation::Tanh) => "tanh",
            Op::Softmax => "softmax",
            Op::Add => "add",
            Op::Scale(_) => "scale",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatCols => "concat_cols",
            Op::GatherRows(_) => "gather_rows",
            Op::AbsErrorSum(_) => "abs_error_sum",
            Op::SquaredErrorSum(_) => "squared_error_sum",
            Op::Reshape => "reshape",
        }
    }
}

struct Node<T> {
    op: Op<T>,
    inputs: Vec<usize>,
    output: usize,
}

pub struct GradTape<T: Scalar> {
    values: Vec<Tensor<T>>,
    labels: Vec<Cow<'static, str>>,
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradTape<T> {
    /// A tape that records nodes for [`GradTape::backward`].
    pub fn new() -> Self {
        GradTape {
            values: Vec::new(),
            labels: Vec::new(),
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that only evaluates; nothing is kept for backward.
    pub fn inference() -> Self {
        GradTape {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Adds an input tensor. Its `requires_grad` flag decides whether
    /// [`GradTape::backward`] fills its gradient; any gradient the tensor
    /// already carries is dropped.
    pub fn leaf(&mut self, mut tensor: Tensor<T>, label: impl Into<Cow<'static, str>>) -> Var {
        tensor.take_grad();
        self.values.push(tensor);
        self.labels.push(label.into());
        Var(self.values.len() - 1)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.leaf(tensor.with_requires_grad(false), "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn label(&self, v: Var) -> &str {
        &self.labels[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.values[v.0].grad()
    }

    /// Label of the first stored value holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.values
            .iter()
            .position(|t| !t.is_finite())
            .map(|i| format!("`{}` (tape value #{i})", self.labels[i]))
    }

    fn push(&mut self, out: Tensor<T>, op: Op<T>, inputs: Vec<usize>) -> Var {
        debug_assert!(
            out.is_finite() || inputs.iter().any(|&i| !self.values[i].is_finite()),
            "{} produced non-finite output from finite inputs",
            op.name()
        );
        let idx = self.values.len();
        self.labels.push(Cow::Borrowed(op.name()));
        self.values.push(out);
        if self.recording {
            self.nodes.push(Node { op, inputs, output: idx });
        }
        Var(idx)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let out = linear::linear_forward(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        Ok(self.push(out, Op::Linear { has_bias: b.is_some() }, inputs))
    }

    /// `a (m x k) * b (k x n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::MatMul, vec![a.0, b.0]))
    }

    /// `a (m x k) * b^T` with `b` shaped `n x k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (n, k2) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nt_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.push(out, Op::MatMulNt, vec![a.0, b.0]))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        let out = conv::conv1d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        Ok(self.push(
            out,
            Op::Conv1d {
                spec,
                has_bias: b.is_some(),
            },
            inputs,
        ))
    }

    pub fn conv1d_transposed(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let out = conv::conv1d_transposed_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride)?;
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        Ok(self.push(
            out,
            Op::ConvTransposed {
                stride,
                has_bias: b.is_some(),
            },
            inputs,
        ))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, cache) = norm::layer_norm_cached(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let cache = if self.recording {
            cache
        } else {
            NormCache {
                xhat: Vec::new(),
                inv_std: Vec::new(),
            }
        };
        Ok(self.push(out, Op::LayerNorm(cache), vec![x.0, gamma.0, beta.0]))
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Var {
        let out = crate::ops::activation::activation(kind, self.value(x));
        self.push(out, Op::Act(kind), vec![x.0])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = norm::softmax_rows(self.value(x))?;
        Ok(self.push(out, Op::Softmax, vec![x.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, Op::Add, vec![a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(s), vec![a.0])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, c) = self.value(a).dims2()?;
        if start > end || end > c {
            return Err(Error::shape("slice_cols", self.shape(a), &[start, end]));
        }
        let w = end - start;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&src[r * c + start..r * c + end]);
        }
        let out = Tensor::new(&[rows, w], data)?;
        Ok(self.push(out, Op::SliceCols { start }, vec![a.0]))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, c) = self.value(a).dims2()?;
        if start > end || end > rows {
            return Err(Error::shape("slice_rows", self.shape(a), &[start, end]));
        }
        let out = Tensor::new(&[end - start, c], self.value(a).data()[start * c..end * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows { start }, vec![a.0]))
    }

    /// Concatenates matrices along the channel axis, in the given order.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let rows = self.value(first).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        Ok(self.push(out, Op::ConcatCols, parts.iter().map(|p| p.0).collect()))
    }

    /// `out[i] = a[indices[i]]`; used for embeddings and length regulation.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (rows, c) = self.value(a).dims2()?;
        if let Some(pos) = indices.iter().position(|&i| i >= rows) {
            return Err(Error::Token {
                index: pos,
                id: indices[pos],
                vocab: rows,
            });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(&[indices.len(), c], data)?;
        Ok(self.push(out, Op::GatherRows(indices.to_vec()), vec![a.0]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = Tensor::new(shape, self.value(a).data().to_vec())?;
        Ok(self.push(out, Op::Reshape, vec![a.0]))
    }

    /// `sum |pred - target|` as a scalar.
    pub fn abs_error_sum(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape("abs_error_sum", p.shape(), target.shape()));
        }
        let s = p.data().iter().zip(target.data()).map(|(&a, &b)| (a - b).abs()).sum();
        let saved = if self.recording { target.data().to_vec() } else { Vec::new() };
        Ok(self.push(Tensor::scalar(s), Op::AbsErrorSum(saved), vec![pred.0]))
    }

    /// `sum (pred - target)^2` as a scalar.
    pub fn squared_error_sum(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape("squared_error_sum", p.shape(), target.shape()));
        }
        let s = p.data().iter().zip(target.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let saved = if self.recording { target.data().to_vec() } else { Vec::new() };
        Ok(self.push(Tensor::scalar(s), Op::SquaredErrorSum(saved), vec![pred.0]))
    }

    /// Back-propagates from a scalar `loss`, accumulating into the `grad`
    /// field of every value that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(Error::Config("backward on an inference tape".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward: loss must be scalar", self.shape(loss), &[]));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for node in self.nodes.iter().rev() {
            let Some(gout) = grads[node.output].take() else {
                continue;
            };
            let contributions = backward_node(node, &self.values, &gout);
            for (input, g) in node.inputs.iter().zip(contributions) {
                if let Some(g) = g {
                    accumulate(&mut grads[*input], g);
                }
            }
            // the output might itself be requested as a gradient target
            grads[node.output] = Some(gout);
        }

        for (value, g) in self.values.iter_mut().zip(grads) {
            if value.requires_grad() {
                if let Some(g) = g {
                    value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    /// Moves a value out, leaving an empty placeholder behind.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.values[v.0], Tensor::zeros(&[0]))
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}

fn backward_node<T: Scalar>(node: &Node<T>, values: &[Tensor<T>], gout: &[T]) -> Vec<Option<Vec<T>>> {
    let input = |k: usize| &values[node.inputs[k]];
    match &node.op {
        Op::Linear { has_bias } => {
            let (dx, dw, db) = linear::linear_backward(input(0), input(1), gout);
            let mut v = vec![Some(dx), Some(dw)];
            if *has_bias {
                v.push(Some(db));
            }
            v
        }
        Op::MatMul => {
            let (a, b) = (input(0), input(1));
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let mut da = vec![T::zero(); m * k];
            matmul_nt_into(gout, b.data(), &mut da, m, n, k);
            let mut db = vec![T::zero(); k * n];
            matmul_tn_into(a.data(), gout, &mut db, m, k, n);
            vec![Some(da), Some(db)]
        }
        Op::MatMulNt => {
            let (a, b) = (input(0), input(1));
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[0];
            let mut da = vec![T::zero(); m * k];
            matmul_into(gout, b.data(), &mut da, m, n, k);
            let mut db = vec![T::zero(); n * k];
            matmul_tn_into(gout, a.data(), &mut db, m, n, k);
            vec![Some(da), Some(db)]
        }
        Op::Conv1d { spec, has_bias } => {
            let (dx, dw, db) = conv::conv1d_backward(input(0), input(1), *spec, gout);
            let mut v = vec![Some(dx), Some(dw)];
            if *has_bias {
                v.push(Some(db));
            }
            v
        }
        Op::ConvTransposed { stride, has_bias } => {
            let (dx, dw, db) = conv::conv1d_transposed_backward(input(0), input(1), *stride, gout);
            let mut v = vec![Some(dx), Some(dw)];
            if *has_bias {
                v.push(Some(db));
            }
            v
        }
        Op::LayerNorm(cache) => {
            let (dx, dg, db) = norm::layer_norm_backward(cache, input(1), gout);
            vec![Some(dx), Some(dg), Some(db)]
        }
        Op::Act(kind) => {
            let x = input(0).data();
            let y = values[node.output].data();
            let dx = gout
                .iter()
                .zip(x.iter().zip(y))
                .map(|(&g, (&xv, &yv))| g * kind.derivative(xv, yv))
                .collect();
            vec![Some(dx)]
        }
        Op::Softmax => vec![Some(norm::softmax_backward(&values[node.output], gout))],
        Op::Add => vec![Some(gout.to_vec()), Some(gout.to_vec())],
        Op::Scale(s) => vec![Some(gout.iter().map(|&g| g * *s).collect())],
        Op::SliceCols { start } => {
            let a = input(0);
            let (rows, c) = (a.shape()[0], a.shape()[1]);
            let w = gout.len() / rows.max(1);
            let mut da = vec![T::zero(); rows * c];
            for r in 0..rows {
                da[r * c + start..r * c + start + w].copy_from_slice(&gout[r * w..(r + 1) * w]);
            }
            vec![Some(da)]
        }
        Op::SliceRows { start } => {
            let a = input(0);
            let c = a.shape()[1];
            let mut da = vec![T::zero(); a.numel()];
            da[start * c..start * c + gout.len()].copy_from_slice(gout);
            vec![Some(da)]
        }
        Op::ConcatCols => {
            let widths: Vec<usize> = node.inputs.iter().map(|&i| values[i].shape()[1]).collect();
            let total: usize = widths.iter().sum();
            let rows = gout.len() / total.max(1);
            let mut out: Vec<Vec<T>> = widths.iter().map(|&w| Vec::with_capacity(rows * w)).collect();
            for r in 0..rows {
                let mut off = r * total;
                for (buf, &w) in out.iter_mut().zip(&widths) {
                    buf.extend_from_slice(&gout[off..off + w]);
                    off += w;
                }
            }
            out.into_iter().map(Some).collect()
        }
        Op::GatherRows(indices) => {
            let a = input(0);
            let c = a.shape()[1];
            let mut da = vec![T::zero(); a.numel()];
            for (r, &i) in indices.iter().enumerate() {
                da[i * c..(i + 1) * c]
                    .iter_mut()
                    .zip(&gout[r * c..(r + 1) * c])
                    .for_each(|(d, &g)| *d += g);
            }
            vec![Some(da)]
        }
        Op::AbsErrorSum(target) => {
            let g = gout[0];
            let dp = input(0)
                .data()
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    let d = p - t;
                    if d > T::zero() {
                        g
                    } else if d < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })
                .collect();
            vec![Some(dp)]
        }
        Op::SquaredErrorSum(target) => {
            let g = gout[0] * T::of(2.0);
            let dp = input(0).data().iter().zip(target).map(|(&p, &t)| g * (p - t)).collect();
            vec![Some(dp)]
        }
        Op::Reshape => vec![Some(gout.to_vec())],
    }
}
