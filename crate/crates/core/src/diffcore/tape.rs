//! Tape-based reverse-mode differentiation over the small operation set the
//! detection cell needs.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! replays the nodes in reverse and returns a [`Gradients`] table; parameter
//! gradients are then folded into a [`GradBuffer`] with
//! [`Gradients::accumulate_into`], which adds rather than overwrites.

use std::cell::Cell;

use super::tensor::{GradBuffer, ParamId, ParamSet, Tensor};
use crate::error::{ensure_dim, Error, Result};

/// Probability floor used by [`Tape::cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations exposed through [`Tape::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Sigmoid,
    Tanh,
    OneMinus,
    Add,
    Sub,
    Mul,
}

impl Elementwise {
    pub fn is_binary(self) -> bool {
        matches!(self, Elementwise::Add | Elementwise::Sub | Elementwise::Mul)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Unary(Elementwise, Var),
    Binary(Elementwise, Var, Var),
    Scale(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    MeanRows(Vec<Var>),
    WeightedSum { weights: Var, rows: Vec<Var> },
    CrossEntropy { probs: Var, label: usize, clamped: bool },
    Sum(Var),
    Mean(Var),
    StraightThrough(Var),
}

#[derive(Debug)]
enum Storage {
    Owned(Vec<f64>),
    Param(ParamId),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    storage: Storage,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward pass.
///
/// Parameters are borrowed from a [`ParamSet`], never copied.
pub struct Tape<'p> {
    params: Option<&'p ParamSet>,
    nodes: Vec<Node>,
    clamped: Cell<usize>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            params: None,
            nodes: Vec::new(),
            clamped: Cell::new(0),
        }
    }

    pub fn with_params(params: &'p ParamSet) -> Self {
        Tape {
            params: Some(params),
            nodes: Vec::new(),
            clamped: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of cross-entropy evaluations whose target probability fell
    /// below [`PROB_FLOOR`].
    pub fn clamped_count(&self) -> usize {
        self.clamped.get()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node {
            shape,
            storage: Storage::Owned(values),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients are not tracked.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    pub fn constant_vec(&mut self, values: Vec<f64>) -> Var {
        self.constant(Tensor::vector(values))
    }

    /// Leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, true)
    }

    /// Binds a parameter of the tape's [`ParamSet`] as a differentiable leaf.
    pub fn param(&mut self, id: ParamId) -> Var {
        let params = self.params.expect("tape was created without a parameter set");
        self.nodes.push(Node {
            shape: params.get(id).shape().to_vec(),
            storage: Storage::Param(id),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].storage {
            Storage::Owned(data) => data,
            Storage::Param(id) => self.params.expect("param node without params").get(*id).data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    /// Single value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let values = self.value(v);
        debug_assert_eq!(values.len(), 1);
        values[0]
    }

    fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].shape.iter().product()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// `weight · x + bias` for a `[out, in]` weight.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let ws = self.shape(w);
        ensure_dim!(ws.len() == 2, "linear weight must be a matrix, got shape {ws:?}");
        let (rows, cols) = (ws[0], ws[1]);
        ensure_dim!(
            self.numel(x) == cols,
            "linear input has {} values, weight expects {cols}",
            self.numel(x)
        );
        ensure_dim!(
            self.numel(b) == rows,
            "linear bias has {} values, weight has {rows} rows",
            self.numel(b)
        );
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let out: Vec<f64> = wv
            .chunks_exact(cols)
            .zip(bv)
            .map(|(row, bias)| row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>() + bias)
            .collect();
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![rows], out, Op::Linear { x, w, b }, rg))
    }

    pub fn elementwise(&mut self, kind: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind.is_binary(), b) {
            (true, Some(b)) => {
                ensure_dim!(
                    self.shape(a) == self.shape(b),
                    "{kind:?} needs congruent shapes, got {:?} and {:?}",
                    self.shape(a),
                    self.shape(b)
                );
                let (av, bv) = (self.value(a), self.value(b));
                let out: Vec<f64> = match kind {
                    Elementwise::Add => av.iter().zip(bv).map(|(x, y)| x + y).collect(),
                    Elementwise::Sub => av.iter().zip(bv).map(|(x, y)| x - y).collect(),
                    Elementwise::Mul => av.iter().zip(bv).map(|(x, y)| x * y).collect(),
                    _ => unreachable!(),
                };
                let rg = self.needs(a) || self.needs(b);
                let shape = self.shape(a).to_vec();
                Ok(self.push(shape, out, Op::Binary(kind, a, b), rg))
            }
            (false, None) => {
                let av = self.value(a);
                let out: Vec<f64> = match kind {
                    Elementwise::Sigmoid => av.iter().map(|&x| sigmoid(x)).collect(),
                    Elementwise::Tanh => av.iter().map(|x| x.tanh()).collect(),
                    Elementwise::OneMinus => av.iter().map(|x| 1.0 - x).collect(),
                    _ => unreachable!(),
                };
                let rg = self.needs(a);
                let shape = self.shape(a).to_vec();
                Ok(self.push(shape, out, Op::Unary(kind, a), rg))
            }
            (true, None) => Err(Error::Contract(format!("{kind:?} takes two operands"))),
            (false, Some(_)) => Err(Error::Contract(format!("{kind:?} takes one operand"))),
        }
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.elementwise(Elementwise::Sigmoid, a, None).expect("unary op")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.elementwise(Elementwise::Tanh, a, None).expect("unary op")
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.elementwise(Elementwise::OneMinus, a, None).expect("unary op")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, a, Some(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, a, Some(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Mul, a, Some(b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).iter().map(|v| v * factor).collect();
        let rg = self.needs(a);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale(a, factor), rg)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        ensure_dim!(self.numel(a) >= 1, "softmax of an empty tensor");
        let out = softmax(self.value(a));
        let rg = self.needs(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::Softmax(a), rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        ensure_dim!(self.numel(a) >= 1, "log-softmax of an empty tensor");
        let out = log_softmax(self.value(a));
        let rg = self.needs(a);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, Op::LogSoftmax(a), rg))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        ensure_dim!(!parts.is_empty(), "concat of an empty list");
        let mut out = Vec::with_capacity(parts.iter().map(|&p| self.numel(p)).sum());
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(vec![out.len()], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Per-dimension arithmetic mean of congruent rows.
    pub fn mean_rows(&mut self, rows: &[Var]) -> Result<Var> {
        ensure_dim!(!rows.is_empty(), "mean of an empty list");
        let shape = self.shape(rows[0]).to_vec();
        for &r in &rows[1..] {
            ensure_dim!(
                self.shape(r) == shape.as_slice(),
                "mean_rows needs congruent rows, got {:?} and {shape:?}",
                self.shape(r)
            );
        }
        let mut out = vec![0.0; self.numel(rows[0])];
        for &r in rows {
            for (o, v) in out.iter_mut().zip(self.value(r)) {
                *o += v;
            }
        }
        let k = rows.len() as f64;
        out.iter_mut().for_each(|o| *o /= k);
        let rg = rows.iter().any(|&r| self.needs(r));
        Ok(self.push(shape, out, Op::MeanRows(rows.to_vec()), rg))
    }

    /// `Σ_i weights[i] · rows[i]`.
    pub fn weighted_sum(&mut self, weights: Var, rows: &[Var]) -> Result<Var> {
        ensure_dim!(!rows.is_empty(), "weighted sum of an empty list");
        ensure_dim!(
            self.numel(weights) == rows.len(),
            "{} weights for {} rows",
            self.numel(weights),
            rows.len()
        );
        let shape = self.shape(rows[0]).to_vec();
        for &r in &rows[1..] {
            ensure_dim!(self.shape(r) == shape.as_slice(), "weighted_sum needs congruent rows");
        }
        let mut out = vec![0.0; self.numel(rows[0])];
        for (&r, &w) in rows.iter().zip(self.value(weights)) {
            for (o, v) in out.iter_mut().zip(self.value(r)) {
                *o += w * v;
            }
        }
        let rg = self.needs(weights) || rows.iter().any(|&r| self.needs(r));
        Ok(self.push(
            shape,
            out,
            Op::WeightedSum {
                weights,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// `−ln probs[label]`, with the probability floored at [`PROB_FLOOR`].
    pub fn cross_entropy(&mut self, probs: Var, label: usize) -> Result<Var> {
        let p = self.value(probs);
        ensure_dim!(label < p.len(), "label {label} out of range for {} classes", p.len());
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!(
                "cross-entropy input sums to {total}, expected a probability vector"
            )));
        }
        let clamped = p[label] <= PROB_FLOOR;
        if clamped {
            self.clamped.set(self.clamped.get() + 1);
            tracing::debug!(label, prob = p[label], "cross-entropy probability clamped");
        }
        let loss = -p[label].max(PROB_FLOOR).ln();
        let rg = self.needs(probs);
        Ok(self.push(vec![1], vec![loss], Op::CrossEntropy { probs, label, clamped }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.needs(a);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let values = self.value(a);
        let m = values.iter().sum::<f64>() / values.len() as f64;
        let rg = self.needs(a);
        self.push(vec![1], vec![m], Op::Mean(a), rg)
    }

    /// Forwards `value` unchanged while routing the incoming gradient to
    /// `grad_path` as if the output were `grad_path` itself, i.e.
    /// `value + (grad_path − stop_gradient(grad_path))`.
    pub fn straight_through(&mut self, value: Vec<f64>, grad_path: Var) -> Result<Var> {
        ensure_dim!(
            value.len() == self.numel(grad_path),
            "straight-through value has {} entries, gradient path {}",
            value.len(),
            self.numel(grad_path)
        );
        let rg = self.needs(grad_path);
        let shape = self.shape(grad_path).to_vec();
        Ok(self.push(shape, value, Op::StraightThrough(grad_path), rg))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.numel(loss) != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let out = match &node.storage {
                Storage::Owned(v) => v.as_slice(),
                Storage::Param(_) => unreachable!("param nodes are leaves"),
            };
            self.propagate(&node.op, &g, out, &mut grads);
            grads[idx] = Some(g);
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.storage {
                Storage::Param(id) => Some((i, id)),
                Storage::Owned(_) => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, op: &Op, g: &[f64], out: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let cols = self.shape(*w)[1];
                let wv = self.value(*w);
                if self.needs(*x) {
                    let dx = slot(grads, *x, cols);
                    for (row, gi) in wv.chunks_exact(cols).zip(g) {
                        for (d, wij) in dx.iter_mut().zip(row) {
                            *d += gi * wij;
                        }
                    }
                }
                if self.needs(*w) {
                    let xv = self.value(*x);
                    let dw = slot(grads, *w, wv.len());
                    for (drow, gi) in dw.chunks_exact_mut(cols).zip(g) {
                        for (d, xj) in drow.iter_mut().zip(xv) {
                            *d += gi * xj;
                        }
                    }
                }
                if self.needs(*b) {
                    add_into(slot(grads, *b, g.len()), g);
                }
            }
            Op::Unary(kind, a) => {
                if !self.needs(*a) {
                    return;
                }
                let da = slot(grads, *a, g.len());
                match kind {
                    Elementwise::Sigmoid => {
                        for ((d, gi), y) in da.iter_mut().zip(g).zip(out) {
                            *d += gi * y * (1.0 - y);
                        }
                    }
                    Elementwise::Tanh => {
                        for ((d, gi), y) in da.iter_mut().zip(g).zip(out) {
                            *d += gi * (1.0 - y * y);
                        }
                    }
                    Elementwise::OneMinus => {
                        for (d, gi) in da.iter_mut().zip(g) {
                            *d -= gi;
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Op::Binary(kind, a, b) => {
                let n = g.len();
                match kind {
                    Elementwise::Add => {
                        if self.needs(*a) {
                            add_into(slot(grads, *a, n), g);
                        }
                        if self.needs(*b) {
                            add_into(slot(grads, *b, n), g);
                        }
                    }
                    Elementwise::Sub => {
                        if self.needs(*a) {
                            add_into(slot(grads, *a, n), g);
                        }
                        if self.needs(*b) {
                            for (d, gi) in slot(grads, *b, n).iter_mut().zip(g) {
                                *d -= gi;
                            }
                        }
                    }
                    Elementwise::Mul => {
                        if self.needs(*a) {
                            let bv = self.value(*b);
                            for ((d, gi), y) in slot(grads, *a, n).iter_mut().zip(g).zip(bv) {
                                *d += gi * y;
                            }
                        }
                        if self.needs(*b) {
                            let av = self.value(*a);
                            for ((d, gi), x) in slot(grads, *b, n).iter_mut().zip(g).zip(av) {
                                *d += gi * x;
                            }
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Op::Scale(a, factor) => {
                if self.needs(*a) {
                    for (d, gi) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                        *d += gi * factor;
                    }
                }
            }
            Op::Softmax(a) => {
                if self.needs(*a) {
                    let dot: f64 = g.iter().zip(out).map(|(gi, y)| gi * y).sum();
                    for ((d, gi), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(out) {
                        *d += y * (gi - dot);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if self.needs(*a) {
                    let total: f64 = g.iter().sum();
                    for ((d, gi), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(out) {
                        *d += gi - y.exp() * total;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.numel(p);
                    if self.needs(p) {
                        add_into(slot(grads, p, n), &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::MeanRows(rows) => {
                let k = rows.len() as f64;
                for &r in rows {
                    if self.needs(r) {
                        for (d, gi) in slot(grads, r, g.len()).iter_mut().zip(g) {
                            *d += gi / k;
                        }
                    }
                }
            }
            Op::WeightedSum { weights, rows } => {
                if self.needs(*weights) {
                    let dots: Vec<f64> = rows
                        .iter()
                        .map(|&r| self.value(r).iter().zip(g).map(|(v, gi)| v * gi).sum())
                        .collect();
                    add_into(slot(grads, *weights, rows.len()), &dots);
                }
                let wv = self.value(*weights);
                for (&r, &w) in rows.iter().zip(wv) {
                    if self.needs(r) {
                        for (d, gi) in slot(grads, r, g.len()).iter_mut().zip(g) {
                            *d += w * gi;
                        }
                    }
                }
            }
            Op::CrossEntropy { probs, label, clamped } => {
                if self.needs(*probs) && !clamped {
                    let p = self.value(*probs)[*label];
                    let n = self.numel(*probs);
                    slot(grads, *probs, n)[*label] -= g[0] / p;
                }
            }
            Op::Sum(a) => {
                if self.needs(*a) {
                    let n = self.numel(*a);
                    slot(grads, *a, n).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if self.needs(*a) {
                    let n = self.numel(*a);
                    let share = g[0] / n as f64;
                    slot(grads, *a, n).iter_mut().for_each(|d| *d += share);
                }
            }
            Op::StraightThrough(src) => {
                if self.needs(*src) {
                    add_into(slot(grads, *src, g.len()), g);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax on plain values.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when `v` is
    /// unreachable from the loss or does not track gradients.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds every bound parameter's gradient into `buf`.
    pub fn accumulate_into(&self, buf: &mut GradBuffer) {
        for &(node, id) in &self.params {
            if let Some(Some(g)) = self.grads.get(node) {
                add_into(buf.get_mut(id).data_mut(), g);
            }
        }
    }
}
