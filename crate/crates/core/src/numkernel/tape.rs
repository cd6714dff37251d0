//! Recorded reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Tape`] evaluates eagerly, stores its value and
//! remembers its inputs. [`Tape::backward`] then walks the record in reverse
//! and accumulates gradients for every tracked node. Nodes are appended in
//! evaluation order, so the record is already topologically sorted.

use std::collections::HashMap;
use std::sync::Arc;

use super::tensor::{Activation, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix stored as per-row `(column, weight)` lists.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, entries: Vec<(usize, f64)>) {
        debug_assert!(entries.iter().all(|(c, _)| *c < self.cols));
        self.rows.push(entries);
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn matmul(&self, x: &Tensor) -> Result<Tensor> {
        if x.rows() != self.cols {
            return Err(Error::shape(format!(
                "sparse matmul of {}x{} by {}x{}",
                self.rows.len(),
                self.cols,
                x.rows(),
                x.cols()
            )));
        }
        let mut out = Tensor::zeros(self.rows.len(), x.cols());
        for (i, entries) in self.rows.iter().enumerate() {
            let dst = out.row_mut(i);
            for &(c, w) in entries {
                for (o, v) in dst.iter_mut().zip(x.row(c)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    fn transpose_matmul(&self, g: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(self.cols, g.cols());
        for (i, entries) in self.rows.iter().enumerate() {
            let src = g.row(i);
            for &(c, w) in entries {
                for (o, v) in out.row_mut(c).iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows.len(), self.cols);
        for (i, entries) in self.rows.iter().enumerate() {
            for &(c, w) in entries {
                out.set(i, c, out.get(i, c) + w);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Activation(Var, Activation),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    RowRearrangeQ(Var, usize, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    SparseMatMul(Arc<SparseRows>, Var),
    Sum(Var),
    SymNormalize(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Arc<Tensor>,
        rows: Arc<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradients produced by [`Tape::backward`], keyed by handle.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    /// Gradient for `v`, or a zero tensor of the given shape if nothing
    /// flowed into it.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Tensor {
        self.grads
            .get(&v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

/// Single-writer record of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value no gradient is requested for.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), tracked))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        let tracked = self.tracked_any(&[a]);
        self.push(value, Op::Scale(a, factor), tracked)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let value = self.value(a).activation(kind);
        let tracked = self.tracked_any(&[a]);
        self.push(value, Op::Activation(a, kind), tracked)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let value = Tensor::concat_rows(&values)?;
        let tracked = self.tracked_any(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), tracked))
    }

    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).mean_rows()?;
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(value, Op::MeanRows(a), tracked))
    }

    pub fn row_rearrange_q(&mut self, a: Var, j: usize, k: usize) -> Result<Var> {
        let value = self.value(a).row_rearrange_q(j, k)?;
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(value, Op::RowRearrangeQ(a, j, k), tracked))
    }

    pub fn gather_rows(&mut self, a: Var, indices: Arc<Vec<usize>>) -> Result<Var> {
        let value = self.value(a).gather_rows(&indices)?;
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(value, Op::GatherRows(a, indices), tracked))
    }

    /// Constant sparse matrix times a recorded value.
    pub fn sparse_matmul(&mut self, s: Arc<SparseRows>, a: Var) -> Result<Var> {
        let value = s.matmul(self.value(a))?;
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(value, Op::SparseMatMul(s, a), tracked))
    }

    /// Sum of all entries as a 1×1 value.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let tracked = self.tracked_any(&[a]);
        self.push(value, Op::Sum(a), tracked)
    }

    /// `D^{-1/2} (W + I) D^{-1/2}` where `D` holds the row sums of `W + I`.
    /// Differentiable in `W`, which is how structure attacks read gradients
    /// with respect to a relaxed adjacency.
    pub fn sym_normalize(&mut self, w: Var) -> Result<Var> {
        let value = sym_normalize_value(self.value(w))?;
        let tracked = self.tracked_any(&[w]);
        Ok(self.push(value, Op::SymNormalize(w), tracked))
    }

    /// Mean softmax cross-entropy over `rows` of `logits` against target
    /// distributions (one-hot or soft) held in the matching rows of `targets`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: Arc<Tensor>,
        rows: Arc<Vec<usize>>,
    ) -> Result<Var> {
        let l = self.value(logits);
        if l.shape() != targets.shape() {
            return Err(Error::shape(format!(
                "cross-entropy logits {:?} vs targets {:?}",
                l.shape(),
                targets.shape()
            )));
        }
        if rows.is_empty() {
            return Err(Error::shape("cross-entropy over zero rows"));
        }
        let mut total = 0.0;
        for &r in rows.iter() {
            if r >= l.rows() {
                return Err(Error::Index(format!("cross-entropy row {r} out of range")));
            }
            let lse = log_sum_exp(l.row(r));
            for (x, t) in l.row(r).iter().zip(targets.row(r)) {
                if *t != 0.0 {
                    total -= t * (x - lse);
                }
            }
        }
        let value = Tensor::scalar(total / rows.len() as f64);
        let tracked = self.tracked_any(&[logits]);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                rows,
            },
            tracked,
        ))
    }

    /// Reverse pass from a 1×1 `loss`. Every tracked node reachable from the
    /// loss receives a gradient of its own shape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let mut out = Gradients::default();
        for (idx, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                if self.nodes[idx].tracked {
                    out.grads.insert(Var(idx), g);
                }
            }
        }
        Ok(out)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].tracked {
                    acc(*a, g.matmul(&bv.transpose())?);
                }
                if self.nodes[b.0].tracked {
                    acc(*b, av.transpose().matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, g.hadamard(bv)?);
                acc(*b, g.hadamard(av)?);
            }
            Op::Scale(a, f) => acc(*a, g.scale(*f)),
            Op::Activation(a, kind) => {
                let x = self.value(*a);
                let y = &node.value;
                let mut d = g.clone();
                for ((dv, xv), yv) in d.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    *dv *= kind.derivative(*xv, *yv);
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = self.value(*p).rows();
                    let idx: Vec<usize> = (offset..offset + rows).collect();
                    acc(*p, g.gather_rows(&idx)?);
                    offset += rows;
                }
            }
            Op::MeanRows(a) => {
                let rows = self.value(*a).rows();
                let inv = 1.0 / rows as f64;
                let mut d = Tensor::zeros(rows, g.cols());
                for r in 0..rows {
                    for (o, v) in d.row_mut(r).iter_mut().zip(g.row(0)) {
                        *o = v * inv;
                    }
                }
                acc(*a, d);
            }
            Op::RowRearrangeQ(a, j, k) => acc(*a, g.row_rearrange_q(*j, *k)?),
            Op::GatherRows(a, indices) => {
                let src = self.value(*a);
                let mut d = Tensor::zeros(src.rows(), src.cols());
                for (r, &i) in indices.iter().enumerate() {
                    for (o, v) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*a, d);
            }
            Op::SparseMatMul(s, a) => acc(*a, s.transpose_matmul(g)),
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Tensor::filled(r, c, g.get(0, 0)));
            }
            Op::SymNormalize(w) => acc(*w, sym_normalize_backward(self.value(*w), g)),
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                rows,
            } => {
                let l = self.value(*logits);
                let scale = g.get(0, 0) / rows.len() as f64;
                let mut d = Tensor::zeros(l.rows(), l.cols());
                for &r in rows.iter() {
                    let lse = log_sum_exp(l.row(r));
                    let mass: f64 = targets.row(r).iter().sum();
                    let dst = d.row_mut(r);
                    for ((o, x), t) in dst.iter_mut().zip(l.row(r)).zip(targets.row(r)) {
                        *o += scale * (mass * (x - lse).exp() - t);
                    }
                }
                acc(*logits, d);
            }
        }
        Ok(())
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn sym_normalize_value(w: &Tensor) -> Result<Tensor> {
    let n = w.rows();
    if w.cols() != n {
        return Err(Error::shape(format!(
            "sym_normalize needs a square matrix, got {:?}",
            w.shape()
        )));
    }
    let s = inv_sqrt_degrees(w);
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let m = w.get(i, j) + if i == j { 1.0 } else { 0.0 };
            out.set(i, j, s[i] * m * s[j]);
        }
    }
    Ok(out)
}

fn inv_sqrt_degrees(w: &Tensor) -> Vec<f64> {
    (0..w.rows())
        .map(|i| {
            let d: f64 = w.row(i).iter().sum::<f64>() + 1.0;
            1.0 / d.sqrt()
        })
        .collect()
}

fn sym_normalize_backward(w: &Tensor, g: &Tensor) -> Tensor {
    // out_ij = s_i m_ij s_j with s_i = d_i^{-1/2}, d_i = sum_j m_ij
    let n = w.rows();
    let s = inv_sqrt_degrees(w);
    let m = |i: usize, j: usize| w.get(i, j) + if i == j { 1.0 } else { 0.0 };
    let mut d_s = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let gij = g.get(i, j);
            d_s[i] += gij * m(i, j) * s[j];
            d_s[j] += gij * s[i] * m(i, j);
        }
    }
    // ds_i/dd_i = -1/2 d_i^{-3/2} = -1/2 s_i^3
    let d_deg: Vec<f64> = (0..n).map(|i| -0.5 * s[i].powi(3) * d_s[i]).collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, g.get(i, j) * s[i] * s[j] + d_deg[i]);
        }
    }
    out
}
