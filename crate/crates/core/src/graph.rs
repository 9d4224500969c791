//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! A [`Graph`] records every operation applied to its variables. Calling
//! [`Graph::backward`] on a scalar variable walks the tape in reverse once
//! and yields the gradient of every variable that depends on a trainable
//! leaf. The tape cannot be replayed a second time.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds, used to name ops in errors and to target fault
/// injection in the gradient-check harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    AddRow,
    MulRow,
    Hadamard,
    Scale,
    MulScalar,
    Relu,
    Sigmoid,
    Softmax,
    MeanRows,
    Transpose,
    Reshape,
    GatherRows,
    ScatterRow,
    Concat,
    SliceCols,
    ScaleRows,
    GraphMean,
    Dropout,
    LayerNorm,
    Sum,
    CrossEntropy,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::AddRow => "add_row",
            OpKind::MulRow => "mul_row",
            OpKind::Hadamard => "hadamard",
            OpKind::Scale => "scale",
            OpKind::MulScalar => "mul_scalar",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::MeanRows => "mean_rows",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::GatherRows => "gather_rows",
            OpKind::ScatterRow => "scatter_row",
            OpKind::Concat => "concat",
            OpKind::SliceCols => "slice_cols",
            OpKind::ScaleRows => "scale_rows",
            OpKind::GraphMean => "graph_mean",
            OpKind::Dropout => "dropout",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

enum Op<R> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, R),
    MulScalar(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    MeanRows(Var),
    Transpose(Var),
    Reshape(Var),
    GatherRows(Var, Vec<usize>),
    ScatterRow(Var, usize, Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    ScaleRows(Var, Vec<R>),
    GraphMean(Var, Arc<Vec<Vec<usize>>>),
    Dropout(Var, Vec<R>),
    LayerNorm(Var, R),
    Sum(Var),
    CrossEntropy(Var, usize),
}

impl<R> Op<R> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::MulRow(..) => OpKind::MulRow,
            Op::Hadamard(..) => OpKind::Hadamard,
            Op::Scale(..) => OpKind::Scale,
            Op::MulScalar(..) => OpKind::MulScalar,
            Op::Relu(..) => OpKind::Relu,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Softmax(..) => OpKind::Softmax,
            Op::MeanRows(..) => OpKind::MeanRows,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Reshape(..) => OpKind::Reshape,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::ScatterRow(..) => OpKind::ScatterRow,
            Op::Concat(..) => OpKind::Concat,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::ScaleRows(..) => OpKind::ScaleRows,
            Op::GraphMean(..) => OpKind::GraphMean,
            Op::Dropout(..) => OpKind::Dropout,
            Op::LayerNorm(..) => OpKind::LayerNorm,
            Op::Sum(..) => OpKind::Sum,
            Op::CrossEntropy(..) => OpKind::CrossEntropy,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::Hadamard(a, b)
            | Op::MulScalar(a, b)
            | Op::ScatterRow(a, _, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::MeanRows(a)
            | Op::Transpose(a)
            | Op::Reshape(a)
            | Op::GatherRows(a, _)
            | Op::SliceCols(a, _)
            | Op::ScaleRows(a, _)
            | Op::GraphMean(a, _)
            | Op::Dropout(a, _)
            | Op::LayerNorm(a, _)
            | Op::Sum(a)
            | Op::CrossEntropy(a, _) => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

struct Node<R> {
    value: Arc<Tensor<R>>,
    op: Op<R>,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
    params: Vec<(ParamId, Var)>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, var: Var) -> Option<&Tensor<R>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradients of every parameter leaf that was used in the pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<R>)> + '_ {
        self.params
            .iter()
            .filter_map(move |&(id, var)| self.get(var).map(|g| (id, g)))
    }
}

/// Tape of recorded operations for a single forward pass.
pub struct Graph<R> {
    nodes: Vec<Node<R>>,
    param_vars: Vec<(ParamId, Var)>,
    verify: bool,
    consumed: bool,
    rng: Option<ChaCha8Rng>,
    fault: Option<OpKind>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: Vec::new(),
            verify: false,
            consumed: false,
            rng: None,
            fault: None,
        }
    }

    /// Training-mode graph whose dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        let mut g = Self::new();
        g.rng = Some(ChaCha8Rng::seed_from_u64(seed));
        g
    }

    /// Fail hard on any non-finite forward value or gradient.
    pub fn with_verification(mut self) -> Self {
        self.verify = true;
        self
    }

    /// Test hook: scales the input gradients of every `kind` op by 1.5 so a
    /// gradient checker has a known-bad backward rule to catch.
    pub fn with_backward_fault(mut self, kind: OpKind) -> Self {
        self.fault = Some(kind);
        self
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<R> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn dims(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.rows_cols()
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>) -> Result<Var> {
        if self.verify && !value.is_finite() {
            return Err(Error::NonFinite { op: op.kind().name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Arc<Tensor<R>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.leaf(Arc::new(value), false)
    }

    /// A differentiable leaf that is not a model parameter.
    pub fn input(&mut self, value: Tensor<R>) -> Var {
        self.leaf(Arc::new(value), true)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same
    /// variable so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<R>, id: ParamId) -> Var {
        if let Some(&(_, var)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return var;
        }
        let var = self.leaf(store.value_arc(id), true);
        self.param_vars.push((id, var));
        var
    }

    // ---- forward ops -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch(OpKind::MatMul, a, b));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![R::zero(); m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &x) in arow.iter().enumerate() {
                if x == R::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o = *o + x * y;
                }
            }
        }
        self.push(Tensor::with_shape(vec![m, n], out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.mismatch(OpKind::Add, a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::with_shape(shape, data), Op::Add(a, b))
    }

    /// Adds a `1 × d` (or `d`) row to every row of an `n × d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = self.dims(a);
        if self.dims(row) != (1, d) {
            return Err(self.mismatch(OpKind::AddRow, a, row));
        }
        let rv = self.value(row).data();
        let data: Vec<R> = self
            .value(a)
            .data()
            .chunks(d)
            .flat_map(|r| r.iter().zip(rv).map(|(&x, &y)| x + y))
            .collect();
        self.push(Tensor::with_shape(vec![n, d], data), Op::AddRow(a, row))
    }

    /// Multiplies every row of an `n × d` matrix elementwise by a `d` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = self.dims(a);
        if self.dims(row) != (1, d) {
            return Err(self.mismatch(OpKind::MulRow, a, row));
        }
        let rv = self.value(row).data();
        let data: Vec<R> = self
            .value(a)
            .data()
            .chunks(d)
            .flat_map(|r| r.iter().zip(rv).map(|(&x, &y)| x * y))
            .collect();
        self.push(Tensor::with_shape(vec![n, d], data), Op::MulRow(a, row))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.mismatch(OpKind::Hadamard, a, b));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::with_shape(shape, data), Op::Hadamard(a, b))
    }

    pub fn scale(&mut self, a: Var, c: R) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x * c).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::with_shape(shape, data), Op::Scale(a, c))
    }

    /// Multiplies a tensor by a differentiable one-element tensor.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(self.mismatch(OpKind::MulScalar, a, s));
        }
        let sv = self.value(s).data()[0];
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x * sv).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::with_shape(shape, data), Op::MulScalar(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t
            .data()
            .iter()
            .map(|&x| if x > R::zero() { x } else { R::zero() })
            .collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::with_shape(shape, data), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| sigmoid(x)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::with_shape(shape, data), Op::Sigmoid(a))
    }

    /// Softmax over the last dimension of each row.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.dims(a);
        let t = self.value(a);
        if !t.is_finite() {
            return Err(Error::NonFinite { op: "softmax" });
        }
        let mut data = Vec::with_capacity(n * d);
        for row in t.data().chunks(d) {
            data.extend(softmax_row(row));
        }
        self.push(Tensor::with_shape(vec![n, d], data), Op::Softmax(a))
    }

    /// Column mean over rows: `n × d -> 1 × d`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.dims(a);
        let mut out = vec![R::zero(); d];
        for row in self.value(a).data().chunks(d) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
        let inv = R::one() / R::from_f64(n as f64);
        out.iter_mut().for_each(|o| *o = *o * inv);
        self.push(Tensor::with_shape(vec![1, d], out), Op::MeanRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (n, d) = self.dims(a);
        let src = self.value(a).data();
        let mut out = vec![R::zero(); n * d];
        for i in 0..n {
            for j in 0..d {
                out[j * n + i] = src[i * d + j];
            }
        }
        self.push(Tensor::with_shape(vec![d, n], out), Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let target = Tensor::new(shape.to_vec(), t.data().to_vec()).map_err(|_| Error::ShapeMismatch {
            op: "reshape",
            left: t.shape().to_vec(),
            right: shape.to_vec(),
        })?;
        self.push(target, Op::Reshape(a))
    }

    /// Selects rows by index (rows may repeat).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (n, d) = self.dims(a);
        if indices.is_empty() {
            return Err(Error::Empty("gather_rows indices"));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: n,
                });
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(
            Tensor::with_shape(vec![indices.len(), d], out),
            Op::GatherRows(a, indices.to_vec()),
        )
    }

    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        self.gather_rows(a, &[index])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather_rows(a, &idx)
    }

    /// Copy of `a` with row `index` replaced by the `1 × d` row `v`.
    pub fn scatter_row(&mut self, a: Var, index: usize, v: Var) -> Result<Var> {
        let (n, d) = self.dims(a);
        if self.dims(v) != (1, d) {
            return Err(self.mismatch(OpKind::ScatterRow, a, v));
        }
        if index >= n {
            return Err(Error::IndexOutOfRange {
                op: "scatter_row",
                index,
                len: n,
            });
        }
        let mut out = self.value(a).data().to_vec();
        out[index * d..(index + 1) * d].copy_from_slice(self.value(v).data());
        self.push(Tensor::with_shape(vec![n, d], out), Op::ScatterRow(a, index, v))
    }

    /// Concatenation along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(Error::Empty("concat operands"))?;
        let (n, _) = self.dims(first);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pd) = self.dims(p);
            if pn != n {
                return Err(self.mismatch(OpKind::Concat, first, p));
            }
            widths.push(pd);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::with_shape(vec![n, total], out), Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.dims(a);
        if len == 0 || start + len > d {
            return Err(Error::IndexOutOfRange {
                op: "slice_cols",
                index: start + len,
                len: d,
            });
        }
        let src = self.value(a).data();
        let out: Vec<R> = src
            .chunks(d)
            .flat_map(|r| r[start..start + len].iter().copied())
            .collect();
        self.push(Tensor::with_shape(vec![n, len], out), Op::SliceCols(a, start))
    }

    /// Scales row `i` by the constant `weights[i]`.
    pub fn scale_rows(&mut self, a: Var, weights: &[R]) -> Result<Var> {
        let (n, d) = self.dims(a);
        if weights.len() != n {
            return Err(Error::ShapeMismatch {
                op: "scale_rows",
                left: vec![n, d],
                right: vec![weights.len()],
            });
        }
        let out: Vec<R> = self
            .value(a)
            .data()
            .chunks(d)
            .zip(weights)
            .flat_map(|(r, &w)| r.iter().map(move |&x| x * w))
            .collect();
        self.push(Tensor::with_shape(vec![n, d], out), Op::ScaleRows(a, weights.to_vec()))
    }

    /// Neighborhood mean with self-inclusion: row `i` becomes
    /// `(x_i + sum_{j in adj[i]} x_j) / (|adj[i]| + 1)`.
    pub fn graph_mean(&mut self, a: Var, adjacency: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let (n, d) = self.dims(a);
        if adjacency.len() != n {
            return Err(Error::ShapeMismatch {
                op: "graph_mean",
                left: vec![n, d],
                right: vec![adjacency.len()],
            });
        }
        let src = self.value(a).data();
        let mut out = vec![R::zero(); n * d];
        for (i, nbrs) in adjacency.iter().enumerate() {
            let orow = &mut out[i * d..(i + 1) * d];
            orow.copy_from_slice(&src[i * d..(i + 1) * d]);
            for &j in nbrs {
                if j >= n {
                    return Err(Error::IndexOutOfRange {
                        op: "graph_mean",
                        index: j,
                        len: n,
                    });
                }
                for (o, &x) in orow.iter_mut().zip(&src[j * d..(j + 1) * d]) {
                    *o = *o + x;
                }
            }
            let inv = R::one() / R::from_f64((nbrs.len() + 1) as f64);
            orow.iter_mut().for_each(|o| *o = *o * inv);
        }
        self.push(Tensor::with_shape(vec![n, d], out), Op::GraphMean(a, adjacency))
    }

    /// Inverted dropout; the identity in evaluation mode or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(a);
        };
        if rate <= 0.0 {
            return Ok(a);
        }
        if rate >= 1.0 {
            return Err(Error::Config(alloc::format!("dropout rate {rate} must be < 1")));
        }
        let keep = R::from_f64(1.0 / (1.0 - rate));
        let numel = self.nodes[a.0].value.numel();
        let mask: Vec<R> = (0..numel)
            .map(|_| if rng.random::<f64>() < rate { R::zero() } else { keep })
            .collect();
        let t = self.value(a);
        let data = zip_map(t.data(), &mask, |x, m| x * m);
        let shape = t.shape().to_vec();
        self.push(Tensor::with_shape(shape, data), Op::Dropout(a, mask))
    }

    /// Row-wise standardization to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.dims(a);
        let eps = R::from_f64(eps);
        let mut out = Vec::with_capacity(n * d);
        for row in self.value(a).data().chunks(d) {
            let (mean, inv_std) = row_stats(row, eps);
            out.extend(row.iter().map(|&x| (x - mean) * inv_std));
        }
        self.push(Tensor::with_shape(vec![n, d], out), Op::LayerNorm(a, eps))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().fold(R::zero(), |acc, &x| acc + x);
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Cross-entropy of a single row of logits against a gold class,
    /// computed through a stable log-softmax. The gold probability is floored
    /// at [`PROB_FLOOR`], beyond which the loss is flat.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let (n, c) = self.dims(logits);
        if n != 1 {
            return Err(Error::InvalidShape {
                op: "cross_entropy",
                shape: self.shape(logits).to_vec(),
                reason: "expects a single row of logits",
            });
        }
        if gold >= c {
            return Err(Error::IndexOutOfRange {
                op: "cross_entropy",
                index: gold,
                len: c,
            });
        }
        let z = self.value(logits).data();
        let max = z.iter().copied().fold(R::neg_infinity(), R::max);
        let lse = max + z.iter().map(|&x| (x - max).exp()).fold(R::zero(), |a, b| a + b).ln();
        let ceiling = -R::from_f64(PROB_FLOOR).ln();
        let loss = (lse - z[gold]).min(ceiling);
        self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, gold))
    }

    fn mismatch(&self, kind: OpKind, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op: kind.name(),
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    // ---- backward ----------------------------------------------------

    /// Propagates gradients from the scalar `loss` to every variable that
    /// depends on a differentiable leaf. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<R>> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        let loss_shape = self.shape(loss).to_vec();
        grads[loss.0] = Some(Tensor::full(&loss_shape, R::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            if self.verify && !upstream.is_finite() {
                return Err(Error::NonFinite {
                    op: self.nodes[idx].op.kind().name(),
                });
            }
            let kind = self.nodes[idx].op.kind();
            let mut contributions = self.local_grads(idx, &upstream);
            if self.fault == Some(kind) {
                let bump = R::from_f64(1.5);
                for (_, g) in contributions.iter_mut() {
                    g.data_mut().iter_mut().for_each(|x| *x = *x * bump);
                }
            }
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                accumulate(&mut grads[input.0], g);
            }
            grads[idx] = Some(upstream);
        }

        for node in self.nodes.iter_mut() {
            node.op = Op::Leaf;
        }
        Ok(Gradients {
            grads,
            params: core::mem::take(&mut self.param_vars),
        })
    }

    fn local_grads(&self, idx: usize, up: &Tensor<R>) -> Vec<(Var, Tensor<R>)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let g = up.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let mut da = vec![R::zero(); m * k];
                let mut db = vec![R::zero(); k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        let mut acc = R::zero();
                        for (&x, &y) in grow.iter().zip(brow) {
                            acc = acc + x * y;
                        }
                        da[i * k + p] = acc;
                        let x = av[i * k + p];
                        if x != R::zero() {
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for (o, &y) in dbrow.iter_mut().zip(grow) {
                                *o = *o + x * y;
                            }
                        }
                    }
                }
                vec![
                    (*a, Tensor::with_shape(self.shape(*a).to_vec(), da)),
                    (*b, Tensor::with_shape(self.shape(*b).to_vec(), db)),
                ]
            }
            Op::Add(a, b) => vec![
                (*a, Tensor::with_shape(self.shape(*a).to_vec(), g.to_vec())),
                (*b, Tensor::with_shape(self.shape(*b).to_vec(), g.to_vec())),
            ],
            Op::AddRow(a, row) => {
                let (_, d) = self.dims(*a);
                let mut dr = vec![R::zero(); d];
                for grow in g.chunks(d) {
                    for (o, &x) in dr.iter_mut().zip(grow) {
                        *o = *o + x;
                    }
                }
                vec![
                    (*a, Tensor::with_shape(self.shape(*a).to_vec(), g.to_vec())),
                    (*row, Tensor::with_shape(self.shape(*row).to_vec(), dr)),
                ]
            }
            Op::MulRow(a, row) => {
                let (_, d) = self.dims(*a);
                let rv = self.value(*row).data();
                let av = self.value(*a).data();
                let mut da = Vec::with_capacity(g.len());
                let mut dr = vec![R::zero(); d];
                for (grow, arow) in g.chunks(d).zip(av.chunks(d)) {
                    for j in 0..d {
                        da.push(grow[j] * rv[j]);
                        dr[j] = dr[j] + grow[j] * arow[j];
                    }
                }
                vec![
                    (*a, Tensor::with_shape(self.shape(*a).to_vec(), da)),
                    (*row, Tensor::with_shape(self.shape(*row).to_vec(), dr)),
                ]
            }
            Op::Hadamard(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                vec![
                    (
                        *a,
                        Tensor::with_shape(self.shape(*a).to_vec(), zip_map(g, bv, |x, y| x * y)),
                    ),
                    (
                        *b,
                        Tensor::with_shape(self.shape(*b).to_vec(), zip_map(g, av, |x, y| x * y)),
                    ),
                ]
            }
            Op::Scale(a, c) => vec![(
                *a,
                Tensor::with_shape(self.shape(*a).to_vec(), g.iter().map(|&x| x * *c).collect()),
            )],
            Op::MulScalar(a, s) => {
                let sv = self.value(*s).data()[0];
                let av = self.value(*a).data();
                let ds = g.iter().zip(av).fold(R::zero(), |acc, (&x, &y)| acc + x * y);
                vec![
                    (
                        *a,
                        Tensor::with_shape(self.shape(*a).to_vec(), g.iter().map(|&x| x * sv).collect()),
                    ),
                    (*s, Tensor::with_shape(self.shape(*s).to_vec(), vec![ds])),
                ]
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                let da = zip_map(g, av, |x, y| if y > R::zero() { x } else { R::zero() });
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), da))]
            }
            Op::Sigmoid(a) => {
                let da = zip_map(g, out.data(), |x, y| x * y * (R::one() - y));
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), da))]
            }
            Op::Softmax(a) => {
                let (_, d) = self.dims(*a);
                let mut da = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(d).zip(out.data().chunks(d)) {
                    let dot = grow.iter().zip(yrow).fold(R::zero(), |acc, (&x, &y)| acc + x * y);
                    da.extend(grow.iter().zip(yrow).map(|(&x, &y)| y * (x - dot)));
                }
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), da))]
            }
            Op::MeanRows(a) => {
                let (n, _) = self.dims(*a);
                let inv = R::one() / R::from_f64(n as f64);
                let row: Vec<R> = g.iter().map(|&x| x * inv).collect();
                let da: Vec<R> = (0..n).flat_map(|_| row.iter().copied()).collect();
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), da))]
            }
            Op::Transpose(a) => {
                let (n, d) = self.dims(*a);
                let mut da = vec![R::zero(); n * d];
                for i in 0..n {
                    for j in 0..d {
                        da[i * d + j] = g[j * n + i];
                    }
                }
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), da))]
            }
            Op::Reshape(a) => vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), g.to_vec()))],
            Op::GatherRows(a, indices) => {
                let (n, d) = self.dims(*a);
                let mut da = vec![R::zero(); n * d];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        da[i * d + j] = da[i * d + j] + g[k * d + j];
                    }
                }
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), da))]
            }
            Op::ScatterRow(a, index, v) => {
                let (_, d) = self.dims(*a);
                let mut da = g.to_vec();
                let dv = da[index * d..(index + 1) * d].to_vec();
                da[index * d..(index + 1) * d].iter_mut().for_each(|x| *x = R::zero());
                vec![
                    (*a, Tensor::with_shape(self.shape(*a).to_vec(), da)),
                    (*v, Tensor::with_shape(self.shape(*v).to_vec(), dv)),
                ]
            }
            Op::Concat(parts) => {
                let (n, total) = out.rows_cols();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for &p in parts {
                    let (_, w) = self.dims(p);
                    let mut dp = Vec::with_capacity(n * w);
                    for i in 0..n {
                        dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    res.push((p, Tensor::with_shape(self.shape(p).to_vec(), dp)));
                }
                res
            }
            Op::SliceCols(a, start) => {
                let (n, d) = self.dims(*a);
                let (_, len) = out.rows_cols();
                let mut da = vec![R::zero(); n * d];
                for i in 0..n {
                    da[i * d + start..i * d + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), da))]
            }
            Op::ScaleRows(a, weights) => {
                let (_, d) = self.dims(*a);
                let da: Vec<R> = g
                    .chunks(d)
                    .zip(weights)
                    .flat_map(|(r, &w)| r.iter().map(move |&x| x * w))
                    .collect();
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), da))]
            }
            Op::GraphMean(a, adjacency) => {
                let (n, d) = self.dims(*a);
                let mut da = vec![R::zero(); n * d];
                for (i, nbrs) in adjacency.iter().enumerate() {
                    let inv = R::one() / R::from_f64((nbrs.len() + 1) as f64);
                    let grow = &g[i * d..(i + 1) * d];
                    for &j in core::iter::once(&i).chain(nbrs.iter()) {
                        for (o, &x) in da[j * d..(j + 1) * d].iter_mut().zip(grow) {
                            *o = *o + x * inv;
                        }
                    }
                }
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), da))]
            }
            Op::Dropout(a, mask) => {
                vec![(
                    *a,
                    Tensor::with_shape(self.shape(*a).to_vec(), zip_map(g, mask, |x, m| x * m)),
                )]
            }
            Op::LayerNorm(a, eps) => {
                let (_, d) = self.dims(*a);
                let inv_d = R::one() / R::from_f64(d as f64);
                let mut da = Vec::with_capacity(g.len());
                for ((xrow, yrow), grow) in self
                    .value(*a)
                    .data()
                    .chunks(d)
                    .zip(out.data().chunks(d))
                    .zip(g.chunks(d))
                {
                    let (_, inv_std) = row_stats(xrow, *eps);
                    let mean_g = grow.iter().fold(R::zero(), |acc, &x| acc + x) * inv_d;
                    let mean_gy = grow.iter().zip(yrow).fold(R::zero(), |acc, (&x, &y)| acc + x * y) * inv_d;
                    da.extend(
                        grow.iter()
                            .zip(yrow)
                            .map(|(&x, &y)| inv_std * (x - mean_g - y * mean_gy)),
                    );
                }
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), da))]
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                vec![(*a, Tensor::with_shape(self.shape(*a).to_vec(), vec![g[0]; n]))]
            }
            Op::CrossEntropy(logits, gold) => {
                let z = self.value(*logits).data();
                let mut p = softmax_row(z);
                let clamped = p[*gold] < R::from_f64(PROB_FLOOR);
                p[*gold] = p[*gold] - R::one();
                let scale = if clamped { R::zero() } else { g[0] };
                p.iter_mut().for_each(|x| *x = *x * scale);
                vec![(*logits, Tensor::with_shape(self.shape(*logits).to_vec(), p))]
            }
        }
    }
}

fn accumulate<R: Real>(slot: &mut Option<Tensor<R>>, g: Tensor<R>) {
    match slot {
        Some(existing) => {
            for (o, &x) in existing.data_mut().iter_mut().zip(g.data()) {
                *o = *o + x;
            }
        }
        None => *slot = Some(g),
    }
}

fn zip_map<R: Real>(a: &[R], b: &[R], f: impl Fn(R, R) -> R) -> Vec<R> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn row_stats<R: Real>(row: &[R], eps: R) -> (R, R) {
    let inv_d = R::one() / R::from_f64(row.len() as f64);
    let mean = row.iter().fold(R::zero(), |a, &x| a + x) * inv_d;
    let var = row.iter().fold(R::zero(), |a, &x| a + (x - mean) * (x - mean)) * inv_d;
    (mean, R::one() / (var + eps).sqrt())
}

/// Smallest probability the cross-entropy loss takes the log of.
pub const PROB_FLOOR: f64 = 1e-12;

pub(crate) fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row<R: Real>(row: &[R]) -> Vec<R> {
    let max = row.iter().copied().fold(R::neg_infinity(), R::max);
    let exps: Vec<R> = row.iter().map(|&x| (x - max).exp()).collect();
    let total = exps.iter().fold(R::zero(), |a, &x| a + x);
    exps.into_iter().map(|e| e / total).collect()
}
