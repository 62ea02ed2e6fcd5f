//! Wengert tape: every primitive records its output and inputs, and
//! [`Tape::backward`] replays the record in reverse.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::tensor::{dot, matmul_acc, matmul_t_acc, t_matmul_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    /// tanh approximation of GELU
    Gelu,
    Relu,
    Tanh,
    Exp,
}

#[derive(Clone, Debug)]
enum Op {
    Param(usize),
    Constant,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Softmax { x: Var, causal: bool },
    LogSoftmax(Var),
    LayerNorm(Var),
    Nonlin(Var, Nonlinearity),
    Sum(Var),
    Mean(Var),
    Scale(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "multiply",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "multiply_row",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::Softmax { causal: false, .. } => "softmax_rows",
            Op::Softmax { causal: true, .. } => "causal_softmax_rows",
            Op::LogSoftmax(..) => "log_softmax_rows",
            Op::LayerNorm(..) => "layer_normalize_rows",
            Op::Nonlin(..) => "nonlinearity",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Scale(..) => "scale",
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to each parameter leaf, keyed by
/// the slot the parameter was registered under.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    by_slot: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, slot: usize) -> Option<&Tensor> {
        self.by_slot.get(&slot)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.by_slot.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.by_slot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_slot.is_empty()
    }

    /// Sets the gradient for `slot`, replacing any previous value.
    pub fn insert(&mut self, slot: usize, grad: Tensor) {
        self.by_slot.insert(slot, grad);
    }

    /// Adds `other` slot by slot.
    pub fn accumulate(&mut self, other: Gradients) {
        for (slot, g) in other.by_slot {
            match self.by_slot.get_mut(&slot) {
                Some(existing) => add_into(existing.data_mut(), g.data()),
                None => {
                    self.by_slot.insert(slot, g);
                }
            }
        }
    }

    /// Euclidean norm over every gradient element.
    pub fn global_norm(&self) -> f64 {
        self.by_slot
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Single-threaded record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(shape_err(op, format!("expected a matrix, got shape {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, requires_grad)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a trainable leaf. Gradients come back keyed by `slot`.
    pub fn param(&mut self, slot: usize, value: Arc<Tensor>) -> Var {
        self.push_arc(value, Op::Param(slot), true)
    }

    /// Registers a gradient-stopped leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_matrix("matmul", self.value(a))?;
        let (k2, n) = require_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}×{k}] · [{k2}×{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_matrix("matmul_t", self.value(a))?;
        let (n, k2) = require_matrix("matmul_t", self.value(b))?;
        if k != k2 {
            return Err(shape_err("matmul_t", format!("[{m}×{k}] · [{n}×{k2}]ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        matmul_t_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulT(a, b), rg))
    }

    fn zip_same(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(shape_err(op_name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("multiply", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    fn row_broadcast(&self, op_name: &'static str, x: Var, r: Var) -> Result<(usize, usize)> {
        let (rows, cols) = require_matrix(op_name, self.value(x))?;
        let rv = self.value(r);
        if rv.len() != cols || rv.rows() != 1 {
            return Err(shape_err(op_name, format!("{:?} with row {:?}", self.value(x).shape(), rv.shape())));
        }
        Ok((rows, cols))
    }

    /// Adds the vector `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.row_broadcast("add_row", x, b)?;
        let bv = self.value(b).data();
        let mut out = self.value(x).data().to_vec();
        for r in 0..rows {
            for (o, &bb) in out[r * cols..(r + 1) * cols].iter_mut().zip(bv) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::AddRow(x, b), rg))
    }

    /// Multiplies every row of `x` elementwise by the vector `g`.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let (rows, cols) = self.row_broadcast("multiply_row", x, g)?;
        let gv = self.value(g).data();
        let mut out = self.value(x).data().to_vec();
        for r in 0..rows {
            for (o, &gg) in out[r * cols..(r + 1) * cols].iter_mut().zip(gv) {
                *o *= gg;
            }
        }
        let rg = self.rg(x) || self.rg(g);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::MulRow(x, g), rg))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = require_matrix("gather_rows", self.value(table))?;
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(shape_err("gather_rows", format!("row {i} of {rows}")));
            }
            out.extend_from_slice(self.value(table).row(i));
        }
        let rg = self.rg(table);
        Ok(self.push(Tensor::matrix(idx.len(), cols, out)?, Op::GatherRows(table, idx.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = require_matrix("slice_rows", self.value(x))?;
        if start + len > rows {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {rows}", start + len)));
        }
        let out = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(len, cols, out)?, Op::SliceRows(x, start), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = require_matrix("slice_cols", self.value(x))?;
        if start + len > cols {
            return Err(shape_err("slice_cols", format!("cols {start}..{} of {cols}", start + len)));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(rows, len, out)?, Op::SliceCols(x, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| shape_err("concat_cols", "no inputs".into()))?;
        let (rows, _) = require_matrix("concat_cols", self.value(*first))?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = require_matrix("concat_cols", self.value(p))?;
            if r != rows {
                return Err(shape_err("concat_cols", format!("row counts {rows} vs {r}")));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    fn softmax_impl(&mut self, x: Var, causal: bool) -> Result<Var> {
        let op_name = if causal { "causal_softmax_rows" } else { "softmax_rows" };
        let (rows, cols) = require_matrix(op_name, self.value(x))?;
        if causal && rows > cols {
            return Err(shape_err(op_name, format!("causal mask needs rows ≤ cols, got [{rows}×{cols}]")));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            // with a causal mask row r sees columns 0..=r (offset for rectangular inputs)
            let visible = if causal { cols - rows + r + 1 } else { cols };
            let row = &src[r * cols..r * cols + visible];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * cols..r * cols + visible];
            let mut z = 0.0;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                z += *d;
            }
            for d in dst.iter_mut() {
                *d /= z;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::Softmax { x, causal }, rg))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, false)
    }

    /// Softmax where row `r` only sees columns `0..=r + (cols - rows)`; masked
    /// entries are exactly zero.
    pub fn causal_softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, true)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = require_matrix("log_softmax_rows", self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let lse = super::tensor::logsumexp(row);
            for (d, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *d = v - lse;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::LogSoftmax(x), rg))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = require_matrix("layer_normalize_rows", self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (d, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *d = (v - mean) * rstd;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::LayerNorm(x), rg))
    }

    pub fn nonlinearity(&mut self, x: Var, kind: Nonlinearity) -> Result<Var> {
        let t = self.value(x);
        let f: fn(f64) -> f64 = match kind {
            Nonlinearity::Gelu => gelu,
            Nonlinearity::Relu => |v| v.max(0.0),
            Nonlinearity::Tanh => f64::tanh,
            Nonlinearity::Exp => f64::exp,
        };
        let data = t.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Nonlin(x, kind), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("mean", "empty tensor".into()));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * factor).collect();
        let out = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Scale(x, factor), rg))
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape: one backward per
    /// recorded forward graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.value(loss).shape().to_vec();
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { node: idx, op: node.op.name() });
            }
            self.propagate(idx, &g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        let buf = slot.get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(buf);
    }

    fn propagate(
        &self,
        idx: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.data();
        match &node.op {
            Op::Param(slot) => {
                let t = Tensor::new(node.value.shape().to_vec(), g.to_vec())?;
                match out.by_slot.get_mut(slot) {
                    Some(existing) => {
                        for (e, v) in existing.data_mut().iter_mut().zip(t.data()) {
                            *e += v;
                        }
                    }
                    None => {
                        out.by_slot.insert(*slot, t);
                    }
                }
            }
            Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| matmul_t_acc(g, bv, ga, m, n, k));
                self.accumulate(grads, *b, |gb| t_matmul_acc(av, g, gb, m, k, n));
            }
            Op::MatMulT(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).rows();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| matmul_acc(g, bv, ga, m, n, k));
                self.accumulate(grads, *b, |gb| t_matmul_acc(g, av, gb, m, n, k));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, g));
                self.accumulate(grads, *b, |gb| {
                    for (o, &v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((o, &gv), &bb) in ga.iter_mut().zip(g).zip(bv) {
                        *o += gv * bb;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, &gv), &aa) in gb.iter_mut().zip(g).zip(av) {
                        *o += gv * aa;
                    }
                });
            }
            Op::AddRow(x, b) => {
                let cols = self.value(*x).cols();
                self.accumulate(grads, *x, |gx| add_into(gx, g));
                self.accumulate(grads, *b, |gb| {
                    for row in g.chunks(cols) {
                        add_into(gb, row);
                    }
                });
            }
            Op::MulRow(x, gain) => {
                let cols = self.value(*x).cols();
                let (xv, gv) = (self.value(*x).data(), self.value(*gain).data());
                self.accumulate(grads, *x, |gx| {
                    for (gx_row, g_row) in gx.chunks_mut(cols).zip(g.chunks(cols)) {
                        for ((o, &gg), &w) in gx_row.iter_mut().zip(g_row).zip(gv) {
                            *o += gg * w;
                        }
                    }
                });
                self.accumulate(grads, *gain, |gg| {
                    for (x_row, g_row) in xv.chunks(cols).zip(g.chunks(cols)) {
                        for ((o, &gr), &xx) in gg.iter_mut().zip(g_row).zip(x_row) {
                            *o += gr * xx;
                        }
                    }
                });
            }
            Op::GatherRows(table, index) => {
                let cols = self.value(*table).cols();
                self.accumulate(grads, *table, |gt| {
                    for (r, &i) in index.iter().enumerate() {
                        add_into(&mut gt[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let cols = self.value(*x).cols();
                let start = *start;
                self.accumulate(grads, *x, |gx| add_into(&mut gx[start * cols..start * cols + g.len()], g));
            }
            Op::SliceCols(x, start) => {
                let cols = self.value(*x).cols();
                let len = node.value.cols();
                let start = *start;
                self.accumulate(grads, *x, |gx| {
                    for (r, g_row) in g.chunks(len).enumerate() {
                        add_into(&mut gx[r * cols + start..r * cols + start + len], g_row);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    self.accumulate(grads, p, |gp| {
                        for (r, gp_row) in gp.chunks_mut(c).enumerate() {
                            add_into(gp_row, &g[r * total + offset..r * total + offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            Op::Softmax { x, .. } => {
                let cols = node.value.cols();
                self.accumulate(grads, *x, |gx| {
                    for ((gx_row, y_row), g_row) in gx.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                        let s = dot(y_row, g_row);
                        for ((o, &yy), &gg) in gx_row.iter_mut().zip(y_row).zip(g_row) {
                            *o += yy * (gg - s);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let cols = node.value.cols();
                self.accumulate(grads, *x, |gx| {
                    for ((gx_row, y_row), g_row) in gx.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)) {
                        let s: f64 = g_row.iter().sum();
                        for ((o, &yy), &gg) in gx_row.iter_mut().zip(y_row).zip(g_row) {
                            *o += gg - yy.exp() * s;
                        }
                    }
                });
            }
            Op::LayerNorm(x) => {
                let cols = node.value.cols();
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    for (((gx_row, y_row), g_row), x_row) in
                        gx.chunks_mut(cols).zip(y.chunks(cols)).zip(g.chunks(cols)).zip(xv.chunks(cols))
                    {
                        let n = cols as f64;
                        let mean = x_row.iter().sum::<f64>() / n;
                        let var = x_row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let g_mean = g_row.iter().sum::<f64>() / n;
                        let gy_mean = dot(g_row, y_row) / n;
                        for ((o, &gg), &yy) in gx_row.iter_mut().zip(g_row).zip(y_row) {
                            *o += rstd * (gg - g_mean - yy * gy_mean);
                        }
                    }
                });
            }
            Op::Nonlin(x, kind) => {
                let xv = self.value(*x).data();
                let kind = *kind;
                self.accumulate(grads, *x, |gx| {
                    for (((o, &gg), &xx), &yy) in gx.iter_mut().zip(g).zip(xv).zip(y) {
                        let d = match kind {
                            Nonlinearity::Gelu => gelu_grad(xx),
                            Nonlinearity::Relu => {
                                if xx > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Nonlinearity::Tanh => 1.0 - yy * yy,
                            Nonlinearity::Exp => yy,
                        };
                        *o += gg * d;
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g0));
            }
            Op::Mean(x) => {
                let g0 = g[0] / self.value(*x).len() as f64;
                self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += g0));
            }
            Op::Scale(x, f) => {
                let f = *f;
                self.accumulate(grads, *x, |gx| {
                    for (o, &gg) in gx.iter_mut().zip(g) {
                        *o += gg * f;
                    }
                });
            }
        }
        Ok(())
    }
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
