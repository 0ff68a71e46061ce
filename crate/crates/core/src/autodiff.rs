//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every operation of a forward pass in topological order.
//! [`Tape::backward`] walks it in reverse and returns gradients for the nodes
//! that were bound with [`Tape::param`]. Constants never receive gradients,
//! and subgraphs built only from constants are skipped entirely.

use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::tensor::{dot, matmul_acc, matmul_at_acc, matmul_bt_acc, norm, Matrix, Scalar};

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("gradient requested for a node that was never recorded on this tape")]
    NotRecorded,
    #[error("backward needs a scalar loss, got a {rows}x{cols} node")]
    NotScalar { rows: usize, cols: usize },
    #[error("vector norm {norm:e} is below the degenerate threshold")]
    DegenerateVector { norm: f64 },
}

/// Which score-matrix entries a softmax may attend to.
#[derive(Clone, Debug, Default)]
pub struct AttentionMask {
    /// Column-wise key mask; `false` columns receive zero weight.
    pub keys: Option<Vec<bool>>,
    /// Row `i` may only attend to columns `<= i`.
    pub causal: bool,
}

impl AttentionMask {
    #[inline]
    fn allows(&self, row: usize, col: usize) -> bool {
        if self.causal && col > row {
            return false;
        }
        self.keys.as_ref().map_or(true, |k| k[col])
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;
/// Norm floor below which cosine similarity is refused.
pub const COSINE_EPS: f64 = 1e-12;

enum Op<T> {
    Leaf,
    Param(usize),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Gather(Var, Vec<usize>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Matrix<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Softmax {
        x: Var,
        scale: T,
    },
    ColSlice {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MeanRows {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Matrix<T>,
        count: usize,
    },
    InfoNce(InfoNceCache<T>),
    SumAll(Var),
    LinComb(Vec<(Var, T)>),
}

struct InfoNceCache<T> {
    anchor: Var,
    positive: Vec<T>,
    negatives: Rc<Matrix<T>>,
    /// `(softmax_j - [j == 0]) / tau` for every key, positive first.
    weights: Vec<T>,
    sims: Vec<T>,
    key_norms: Vec<T>,
    anchor_norm: T,
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar loss keyed by parameter slot.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    by_param: BTreeMap<usize, Matrix<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, slot: usize) -> Option<&Matrix<T>> {
        self.by_param.get(&slot)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Matrix<T>)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_map(self) -> BTreeMap<usize, Matrix<T>> {
        self.by_param
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, value: Matrix<T>) -> Var {
        self.push(value, Op::Param(slot), true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape(), "add shape");
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((1, out.cols()), r.shape(), "add_row shape");
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o = *o + *b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let mut out = self.value(a).clone();
        out.scale(s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Vec<T>) -> Var {
        let src = self.value(a);
        assert_eq!(src.data().len(), mask.len(), "mul_const shape");
        let data = src.data().iter().zip(&mask).map(|(x, m)| *x * *m).collect();
        let out = Matrix::from_vec(src.rows(), src.cols(), data);
        let rg = self.rg(a);
        self.push(out, Op::MulConst(a, mask), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_bt(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMulBt(a, b), rg)
    }

    /// Row lookup: output row `r` is `table[ids[r]]`.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut out = Matrix::zeros(ids.len(), t.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(t.row(id));
        }
        let rg = self.rg(table);
        self.push(out, Op::Gather(table, ids), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        assert_eq!(self.value(gain).shape(), (1, cols), "layer_norm gain");
        assert_eq!(self.value(bias).shape(), (1, cols), "layer_norm bias");
        let n = T::from_f64(cols as f64);
        let eps = T::from_f64(LAYER_NORM_EPS);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let s = T::one() / (var + eps).sqrt();
            for (h, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *h = (*v - mean) * s;
            }
            rstd.push(s);
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * *gi + *bi;
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| gelu(v));
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Row softmax of `scale * x` restricted to the entries `mask` allows.
    /// Disallowed entries are exactly zero.
    pub fn masked_softmax(&mut self, x: Var, scale: T, mask: &AttentionMask) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if let Some(k) = &mask.keys {
            assert_eq!(k.len(), cols, "softmax key mask");
        }
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mut max = T::neg_infinity();
            for c in 0..cols {
                if mask.allows(r, c) {
                    max = max.max(row[c] * scale);
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let o = out.row_mut(r);
            let mut sum = T::zero();
            for c in 0..cols {
                if mask.allows(r, c) {
                    let e = (row[c] * scale - max).exp_portable();
                    o[c] = e;
                    sum = sum + e;
                }
            }
            for v in o.iter_mut() {
                *v = *v / sum;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::Softmax { x, scale }, rg)
    }

    pub fn col_slice(&mut self, x: Var, start: usize, width: usize) -> Var {
        let xv = self.value(x);
        assert!(start + width <= xv.cols(), "col_slice bounds");
        let mut out = Matrix::zeros(xv.rows(), width);
        for r in 0..xv.rows() {
            out.row_mut(r)
                .copy_from_slice(&xv.row(r)[start..start + width]);
        }
        let rg = self.rg(x);
        self.push(out, Op::ColSlice { x, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in &parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat rows");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(out, Op::ConcatCols(parts), rg)
    }

    /// Mean of the selected rows, as a `1 x cols` node.
    pub fn mean_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        assert!(!rows.is_empty(), "mean over no rows");
        let xv = self.value(x);
        let mut out = Matrix::zeros(1, xv.cols());
        for &r in &rows {
            for (o, v) in out.data_mut().iter_mut().zip(xv.row(r)) {
                *o = *o + *v;
            }
        }
        out.scale(T::one() / T::from_f64(rows.len() as f64));
        let rg = self.rg(x);
        self.push(out, Op::MeanRows { x, rows }, rg)
    }

    /// Mean token negative log-likelihood over rows with a target.
    /// Rows whose target is `None` are ignored; with no targets the loss is 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "cross_entropy rows");
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut total = T::zero();
        let mut count = 0usize;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let row = lv.row(r);
            let lse = log_sum_exp(row);
            for (p, v) in probs.row_mut(r).iter_mut().zip(row) {
                *p = (*v - lse).exp_portable();
            }
            total = total + (lse - row[t]);
            count += 1;
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::from_f64(count as f64)
        };
        let rg = self.rg(logits);
        self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            },
            rg,
        )
    }

    /// InfoNCE with cosine similarity: the positive sits in the denominator
    /// alongside every negative. Keys are constants; only the anchor is
    /// differentiated.
    pub fn info_nce(
        &mut self,
        anchor: Var,
        positive: Vec<T>,
        negatives: Rc<Matrix<T>>,
        tau: T,
    ) -> Result<Var, AutodiffError> {
        let a = self.value(anchor);
        assert_eq!(a.rows(), 1, "info_nce anchor must be a row");
        let d = a.cols();
        assert_eq!(positive.len(), d, "info_nce positive width");
        assert!(negatives.rows() == 0 || negatives.cols() == d, "info_nce negative width");
        let anchor_norm = checked_norm(a.data())?;
        let n = 1 + negatives.rows();
        let mut key_norms = Vec::with_capacity(n);
        let mut sims = Vec::with_capacity(n);
        for j in 0..n {
            let k = if j == 0 { &positive[..] } else { negatives.row(j - 1) };
            let kn = checked_norm(k)?;
            key_norms.push(kn);
            sims.push(dot(a.data(), k) / (anchor_norm * kn));
        }
        let logits: Vec<T> = sims.iter().map(|s| *s / tau).collect();
        let lse = log_sum_exp(&logits);
        let loss = lse - logits[0];
        let weights = logits
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let p = (*l - lse).exp_portable();
                let p = if j == 0 { p - T::one() } else { p };
                p / tau
            })
            .collect();
        let rg = self.rg(anchor);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::InfoNce(InfoNceCache {
                anchor,
                positive,
                negatives,
                weights,
                sims,
                key_norms,
                anchor_norm,
            }),
            rg,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Matrix::scalar(s), Op::SumAll(x), rg)
    }

    /// `Σ wᵢ·xᵢ` over same-shaped nodes.
    pub fn lin_comb(&mut self, terms: Vec<(Var, T)>) -> Var {
        assert!(!terms.is_empty(), "empty linear combination");
        let shape = self.value(terms[0].0).shape();
        let mut out = Matrix::zeros(shape.0, shape.1);
        for (v, w) in &terms {
            assert_eq!(self.value(*v).shape(), shape, "lin_comb shape");
            out.add_scaled(self.value(*v), *w);
        }
        let rg = terms.iter().any(|(v, _)| self.rg(*v));
        self.push(out, Op::LinComb(terms), rg)
    }

    /// Backpropagates from a scalar `loss` and returns per-parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        let node = self.nodes.get(loss.0).ok_or(AutodiffError::NotRecorded)?;
        if node.value.shape() != (1, 1) {
            let (rows, cols) = node.value.shape();
            return Err(AutodiffError::NotScalar { rows, cols });
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(slot) => {
                    match out.by_param.get_mut(slot) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            out.by_param.insert(*slot, g);
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, |m| m.add_assign(&g));
                    self.acc(&mut grads, *b, |m| m.add_assign(&g));
                }
                Op::AddRow(a, row) => {
                    self.acc(&mut grads, *a, |m| m.add_assign(&g));
                    self.acc(&mut grads, *row, |m| {
                        for r in 0..g.rows() {
                            for (o, v) in m.data_mut().iter_mut().zip(g.row(r)) {
                                *o = *o + *v;
                            }
                        }
                    });
                }
                Op::Scale(a, s) => {
                    self.acc(&mut grads, *a, |m| m.add_scaled(&g, *s));
                }
                Op::MulConst(a, mask) => {
                    self.acc(&mut grads, *a, |m| {
                        for ((o, gv), k) in m.data_mut().iter_mut().zip(g.data()).zip(mask) {
                            *o = *o + *gv * *k;
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, |m| matmul_bt_acc(&g, bv, m));
                    self.acc(&mut grads, *b, |m| matmul_at_acc(av, &g, m));
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.acc(&mut grads, *a, |m| matmul_acc(&g, bv, m));
                    self.acc(&mut grads, *b, |m| matmul_at_acc(&g, av, m));
                }
                Op::Gather(table, ids) => {
                    self.acc(&mut grads, *table, |m| {
                        for (r, &id) in ids.iter().enumerate() {
                            for (o, v) in m.row_mut(id).iter_mut().zip(g.row(r)) {
                                *o = *o + *v;
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    rstd,
                } => {
                    let gv = self.value(*gain).data();
                    self.acc(&mut grads, *gain, |m| {
                        for r in 0..g.rows() {
                            for ((o, dy), h) in m.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                                *o = *o + *dy * *h;
                            }
                        }
                    });
                    self.acc(&mut grads, *bias, |m| {
                        for r in 0..g.rows() {
                            for (o, dy) in m.data_mut().iter_mut().zip(g.row(r)) {
                                *o = *o + *dy;
                            }
                        }
                    });
                    self.acc(&mut grads, *x, |m| {
                        let n = T::from_f64(g.cols() as f64);
                        let mut dxhat = vec![T::zero(); g.cols()];
                        for r in 0..g.rows() {
                            for ((d, dy), gi) in dxhat.iter_mut().zip(g.row(r)).zip(gv) {
                                *d = *dy * *gi;
                            }
                            let h = xhat.row(r);
                            let mean_d = dxhat.iter().copied().sum::<T>() / n;
                            let mean_dh = dot(&dxhat, h) / n;
                            let s = rstd[r];
                            for ((o, d), hv) in m.row_mut(r).iter_mut().zip(&dxhat).zip(h) {
                                *o = *o + s * (*d - mean_d - *hv * mean_dh);
                            }
                        }
                    });
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    self.acc(&mut grads, *x, |m| {
                        for ((o, dy), v) in m.data_mut().iter_mut().zip(g.data()).zip(xv.data()) {
                            *o = *o + *dy * gelu_grad(*v);
                        }
                    });
                }
                Op::Softmax { x, scale } => {
                    let y = &node.value;
                    self.acc(&mut grads, *x, |m| {
                        for r in 0..y.rows() {
                            let yr = y.row(r);
                            let gr = g.row(r);
                            let inner = dot(yr, gr);
                            for ((o, yv), gv) in m.row_mut(r).iter_mut().zip(yr).zip(gr) {
                                *o = *o + *scale * *yv * (*gv - inner);
                            }
                        }
                    });
                }
                Op::ColSlice { x, start } => {
                    let w = g.cols();
                    self.acc(&mut grads, *x, |m| {
                        for r in 0..g.rows() {
                            for (o, v) in m.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                                *o = *o + *v;
                            }
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        self.acc(&mut grads, *p, |m| {
                            for r in 0..g.rows() {
                                for (o, v) in m.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                    *o = *o + *v;
                                }
                            }
                        });
                        offset += w;
                    }
                }
                Op::MeanRows { x, rows } => {
                    let inv = T::one() / T::from_f64(rows.len() as f64);
                    self.acc(&mut grads, *x, |m| {
                        for &r in rows {
                            for (o, v) in m.row_mut(r).iter_mut().zip(g.data()) {
                                *o = *o + *v * inv;
                            }
                        }
                    });
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    if *count > 0 {
                        let s = g.item() / T::from_f64(*count as f64);
                        self.acc(&mut grads, *logits, |m| {
                            for (r, t) in targets.iter().enumerate() {
                                let Some(t) = *t else { continue };
                                for (o, p) in m.row_mut(r).iter_mut().zip(probs.row(r)) {
                                    *o = *o + *p * s;
                                }
                                let o = &mut m.row_mut(r)[t];
                                *o = *o - s;
                            }
                        });
                    }
                }
                Op::InfoNce(c) => {
                    let a = self.value(c.anchor).data();
                    let up = g.item();
                    self.acc(&mut grads, c.anchor, |m| {
                        let an = c.anchor_norm;
                        let mut radial = T::zero();
                        let out = m.data_mut();
                        for j in 0..c.weights.len() {
                            let k = if j == 0 { &c.positive[..] } else { c.negatives.row(j - 1) };
                            let w = c.weights[j] * up;
                            let coef = w / (an * c.key_norms[j]);
                            for (o, kv) in out.iter_mut().zip(k) {
                                *o = *o + coef * *kv;
                            }
                            radial = radial + w * c.sims[j];
                        }
                        let coef = radial / (an * an);
                        for (o, av) in out.iter_mut().zip(a) {
                            *o = *o - coef * *av;
                        }
                    });
                }
                Op::SumAll(x) => {
                    let v = g.item();
                    self.acc(&mut grads, *x, |m| {
                        for o in m.data_mut() {
                            *o = *o + v;
                        }
                    });
                }
                Op::LinComb(terms) => {
                    for (v, w) in terms {
                        self.acc(&mut grads, *v, |m| m.add_scaled(&g, *w));
                    }
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Matrix<T>>], v: Var, f: impl FnOnce(&mut Matrix<T>)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let (r, c) = self.nodes[v.0].value.shape();
        let slot = grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c));
        f(slot);
    }
}

fn checked_norm<T: Scalar>(v: &[T]) -> Result<T, AutodiffError> {
    let n = norm(v);
    if !(n.to_f64() > COSINE_EPS) {
        return Err(AutodiffError::DegenerateVector { norm: n.to_f64() });
    }
    Ok(n)
}

/// Max-shifted log-sum-exp.
pub fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let s: T = xs.iter().map(|x| (*x - max).exp_portable()).sum();
    max + s.ln_portable()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh_portable())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    let t = (c * (x + k * x * x * x)).tanh_portable();
    let du = c * (T::one() + T::from_f64(3.0) * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}
