//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! Every operation evaluates eagerly and appends a node; `backward` walks the
//! nodes in reverse. Vectors are `1 x n` matrices and scalars `1 x 1`.

use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use rayon::prelude::*;

use crate::float::Float;

const ATTN_ROW_BLOCK: usize = 128;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Which keys each query may attend to.
#[derive(Clone, Debug)]
pub enum AttnPattern {
    /// Every query sees every key.
    Dense,
    /// `allowed[[q, k]]`; every row needs at least one `true`.
    Masked(Arc<Array2<bool>>),
    /// Disjoint groups of rows of a shared token set; tokens only see tokens
    /// of their own group. Queries and keys must be the same rows.
    Groups(Arc<Vec<Vec<usize>>>),
}

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Exp(Var),
    Clamp(Var, T, T),
    Min(Var, Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<T>, inv_std: Array1<T> },
    Softmax { x: Var },
    LogSoftmax { x: Var, mask: Option<Arc<Array2<bool>>> },
    SumAll(Var),
    MeanRows(Var),
    Pick(Var, usize, usize),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Attention { q: Var, k: Var, v: Var, heads: usize, pattern: AttnPattern, probs: Vec<Array2<T>> },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

pub struct Tape<T: Float> {
    nodes: Vec<Node<T>>,
    grad: bool,
}

impl<T: Float> Tape<T> {
    /// A tape that records what `backward` needs.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), grad: true }
    }

    /// A forward-only tape; attention probabilities are not retained and
    /// `backward` is unavailable.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), grad: false }
    }

    pub fn records_grad(&self) -> bool {
        self.grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let x = self.value(v);
        debug_assert_eq!(x.dim(), (1, 1));
        x[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A leaf whose gradient is reported under parameter index `id`.
    pub fn param(&mut self, id: usize, value: Array2<T>) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(self.value(b));
        self.push(y, Op::MatMul(a, b))
    }

    /// `a . b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(&self.value(b).t());
        self.push(y, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) - self.value(b);
        self.push(y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) * self.value(b);
        self.push(y, Op::Mul(a, b))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let y = self.value(a) * c;
        self.push(y, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.push(y, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(|x| x.exp());
        self.push(y, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let y = self.value(a).mapv(|x| x.max(lo).min(hi));
        self.push(y, Op::Clamp(a, lo, hi))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        Zip::from(&mut y).and(self.value(b)).for_each(|y, &b| *y = y.min(b));
        self.push(y, Op::Min(a, b))
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let eps = T::of(1e-5);
        let xv = self.value(x);
        let n = T::of(xv.ncols() as f64);
        let mut xhat = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().fold(T::zero(), |acc, &v| acc + v * v) / n;
            *inv = T::one() / (var + eps).sqrt();
            let i = *inv;
            row.mapv_inplace(|v| v * i);
        }
        let y = &xhat * self.value(gamma) + self.value(beta);
        self.push(y, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Row-wise softmax; entries outside `mask` are exactly zero.
    pub fn softmax(&mut self, x: Var, mask: Option<Arc<Array2<bool>>>) -> Var {
        let mut y = self.value(x).clone();
        for (r, mut row) in y.rows_mut().into_iter().enumerate() {
            softmax_row(row.as_slice_mut().expect("standard layout"), mask.as_ref().map(|m| m.row(r)));
        }
        self.push(y, Op::Softmax { x })
    }

    /// Row-wise log-softmax; entries outside `mask` are reported as zero and
    /// receive no gradient.
    pub fn log_softmax(&mut self, x: Var, mask: Option<Arc<Array2<bool>>>) -> Var {
        let mut y = self.value(x).clone();
        for (r, mut row) in y.rows_mut().into_iter().enumerate() {
            let allowed = |c: usize| mask.as_ref().is_none_or(|m| m[[r, c]]);
            let max = (0..row.len())
                .filter(|&c| allowed(c))
                .map(|c| row[c])
                .fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for c in 0..row.len() {
                if allowed(c) {
                    sum += (row[c] - max).exp();
                }
            }
            let lse = max + sum.ln();
            for c in 0..row.len() {
                row[c] = if allowed(c) { row[c] - lse } else { T::zero() };
            }
        }
        self.push(y, Op::LogSoftmax { x, mask })
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let y = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(y, Op::SumAll(a))
    }

    /// Column means as a `1 x n` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let y = x.sum_axis(Axis(0)).insert_axis(Axis(0)) / T::of(x.nrows().max(1) as f64);
        self.push(y, Op::MeanRows(a))
    }

    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Var {
        let y = Array2::from_elem((1, 1), self.value(a)[[r, c]]);
        self.push(y, Op::Pick(a, r, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let y = self.value(a).t().to_owned();
        self.push(y, Op::Transpose(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<T>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views).expect("equal row counts");
        self.push(y, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let y = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(y, Op::SliceCols(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<T>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(0), &views).expect("equal column counts");
        self.push(y, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let y = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(y, Op::SliceRows(a, start))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let y = self.value(a).select(Axis(0), rows);
        self.push(y, Op::GatherRows(a, rows.to_vec()))
    }

    /// Multi-head scaled dot-product attention on already projected
    /// queries, keys and values; heads split the columns evenly.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, pattern: AttnPattern) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut out = Array2::zeros((qv.nrows(), vv.ncols()));
        let mut probs = Vec::new();
        match &pattern {
            AttnPattern::Dense | AttnPattern::Masked(_) => {
                let mask = match &pattern {
                    AttnPattern::Masked(m) => Some(m.as_ref()),
                    _ => None,
                };
                if !self.grad {
                    // Row blocks keep the score matrix in cache.
                    let heads_out: Vec<Array2<T>> = (0..heads)
                        .into_par_iter()
                        .map(|h| {
                            let cols = s![.., h * dh..(h + 1) * dh];
                            let qs = &qv.slice(cols) * scale;
                            let kt = kv.slice(cols).t().as_standard_layout().into_owned();
                            let vh = vv.slice(cols).as_standard_layout().into_owned();
                            let mut o = Array2::zeros((qv.nrows(), dh));
                            let mut buf = Array2::zeros((ATTN_ROW_BLOCK.min(qv.nrows()), kv.nrows()));
                            for r0 in (0..qv.nrows()).step_by(ATTN_ROW_BLOCK) {
                                let r1 = (r0 + ATTN_ROW_BLOCK).min(qv.nrows());
                                let mut p = buf.slice_mut(s![..r1 - r0, ..]);
                                general_mat_mul(T::one(), &qs.slice(s![r0..r1, ..]), &kt, T::zero(), &mut p);
                                for (i, mut row) in p.rows_mut().into_iter().enumerate() {
                                    softmax_row(row.as_slice_mut().expect("standard layout"), mask.map(|m| m.row(r0 + i)));
                                }
                                general_mat_mul(T::one(), &p, &vh, T::zero(), &mut o.slice_mut(s![r0..r1, ..]));
                            }
                            o
                        })
                        .collect();
                    for (h, o) in heads_out.iter().enumerate() {
                        out.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(o);
                    }
                } else {
                    for h in 0..heads {
                        let cols = s![.., h * dh..(h + 1) * dh];
                        let qs = &qv.slice(cols) * scale;
                        let mut p = qs.dot(&kv.slice(cols).t());
                        for (r, mut row) in p.rows_mut().into_iter().enumerate() {
                            softmax_row(row.as_slice_mut().expect("standard layout"), mask.map(|m| m.row(r)));
                        }
                        general_mat_mul(T::one(), &p, &vv.slice(cols), T::zero(), &mut out.slice_mut(cols));
                        probs.push(p);
                    }
                }
            }
            AttnPattern::Groups(groups) => {
                for g in groups.iter() {
                    let gq = qv.select(Axis(0), g);
                    let gk = kv.select(Axis(0), g);
                    let gv = vv.select(Axis(0), g);
                    for h in 0..heads {
                        let cols = s![.., h * dh..(h + 1) * dh];
                        let qs = &gq.slice(cols) * scale;
                        let mut p = qs.dot(&gk.slice(cols).t());
                        for mut row in p.rows_mut() {
                            softmax_row(row.as_slice_mut().expect("standard layout"), None);
                        }
                        let o = p.dot(&gv.slice(cols));
                        for (i, &r) in g.iter().enumerate() {
                            out.slice_mut(s![r, h * dh..(h + 1) * dh]).assign(&o.row(i));
                        }
                        if self.grad {
                            probs.push(p);
                        }
                    }
                }
            }
        }
        self.push(out, Op::Attention { q, k, v, heads, pattern, probs })
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every parameter
    /// leaf, as `(param id, gradient)`; a parameter used twice is summed.
    pub fn backward(&self, loss: Var) -> Vec<(usize, Array2<T>)> {
        assert!(self.grad, "backward on an inference tape");
        assert_eq!(self.value(loss).dim(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));
        let mut out = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.push((*id, g)),
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&val(*b).t()));
                    acc(&mut grads, *b, val(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(&mut grads, *a, g.dot(val(*b)));
                    acc(&mut grads, *b, g.t().dot(val(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.mapv(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * val(*b));
                    acc(&mut grads, *b, &g * val(*a));
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                        if x <= T::zero() {
                            *d = T::zero();
                        }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Exp(a) => acc(&mut grads, *a, g * &node.value),
                Op::Clamp(a, lo, hi) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = T::zero();
                        }
                    });
                    acc(&mut grads, *a, d);
                }
                Op::Min(a, b) => {
                    let mut da = g.clone();
                    let mut db = g;
                    Zip::from(&mut da)
                        .and(&mut db)
                        .and(val(*a))
                        .and(val(*b))
                        .for_each(|da, db, &x, &y| {
                            if x <= y {
                                *db = T::zero();
                            } else {
                                *da = T::zero();
                            }
                        });
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * val(*gamma);
                    let n = T::of(xhat.ncols() as f64);
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let s1 = dh.sum();
                        let s2 = dh.iter().zip(xh.iter()).fold(T::zero(), |a, (&p, &q)| a + p * q);
                        let k = inv_std[r] / n;
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = k * (n * dh[c] - s1 - xh[c] * s2);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Softmax { x, .. } => {
                    let p = &node.value;
                    let mut dx = &g * p;
                    for (mut row, prow) in dx.rows_mut().into_iter().zip(p.rows()) {
                        let s = row.sum();
                        Zip::from(&mut row).and(&prow).for_each(|d, &pv| *d -= pv * s);
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::LogSoftmax { x, mask } => {
                    let y = &node.value;
                    let mut dx = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let allowed = |c: usize| mask.as_ref().is_none_or(|m| m[[r, c]]);
                        let s = (0..y.ncols()).filter(|&c| allowed(c)).fold(T::zero(), |a, c| a + g[[r, c]]);
                        for c in 0..y.ncols() {
                            if allowed(c) {
                                dx[[r, c]] = g[[r, c]] - y[[r, c]].exp() * s;
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SumAll(a) => {
                    let d = Array2::from_elem(val(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, d);
                }
                Op::MeanRows(a) => {
                    let (m, _) = val(*a).dim();
                    let row = g.row(0).mapv(|x| x / T::of(m.max(1) as f64));
                    let d = row.broadcast(val(*a).dim()).expect("row broadcast").to_owned();
                    acc(&mut grads, *a, d);
                }
                Op::Pick(a, r, c) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    d[[*r, *c]] = g[[0, 0]];
                    acc(&mut grads, *a, d);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = val(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, d);
                }
                Op::GatherRows(a, rows) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = d.row_mut(r);
                        dst += &g.row(i);
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Attention { q, k, v, heads, pattern, probs } => {
                    let (dq, dk, dv) = attention_backward(&g, val(*q), val(*k), val(*v), *heads, pattern, probs);
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
            }
        }
        out
    }
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn acc<T: Float>(grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

/// In-place softmax over `row`, restricted to `allowed` when given.
fn softmax_row<T: Float>(row: &mut [T], allowed: Option<ndarray::ArrayView1<bool>>) {
    let Some(allowed) = allowed else {
        return T::softmax_in_place(row);
    };
    let mut max = T::neg_infinity();
    for (&x, &ok) in row.iter().zip(allowed.iter()) {
        if ok && x > max {
            max = x;
        }
    }
    let mut sum = T::zero();
    for (x, &ok) in row.iter_mut().zip(allowed.iter()) {
        if ok {
            *x = (*x - max).softmax_exp();
            sum += *x;
        } else {
            *x = T::zero();
        }
    }
    let inv = T::one() / sum;
    for x in row.iter_mut() {
        *x *= inv;
    }
}

fn attention_backward<T: Float>(
    g: &Array2<T>,
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    heads: usize,
    pattern: &AttnPattern,
    probs: &[Array2<T>],
) -> (Array2<T>, Array2<T>, Array2<T>) {
    let dh = q.ncols() / heads;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut dq = Array2::zeros(q.dim());
    let mut dk = Array2::zeros(k.dim());
    let mut dv = Array2::zeros(v.dim());
    // One head of one block: returns (dq, dk, dv) for the block's rows.
    let head = |p: &Array2<T>, go: ArrayView2<T>, qh: ArrayView2<T>, kh: ArrayView2<T>, vh: ArrayView2<T>| {
        let dvh = p.t().dot(&go);
        let dp = go.dot(&vh.t());
        let mut ds = &dp * p;
        for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
            let s = row.sum();
            Zip::from(&mut row).and(&prow).for_each(|d, &pv| *d -= pv * s);
        }
        ds.mapv_inplace(|x| x * scale);
        (ds.dot(&kh), ds.t().dot(&qh), dvh)
    };
    match pattern {
        AttnPattern::Dense | AttnPattern::Masked(_) => {
            for h in 0..heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let (a, b, c) = head(&probs[h], g.slice(cols), q.slice(cols), k.slice(cols), v.slice(cols));
                dq.slice_mut(cols).assign(&a);
                dk.slice_mut(cols).assign(&b);
                dv.slice_mut(cols).assign(&c);
            }
        }
        AttnPattern::Groups(groups) => {
            let mut idx = 0;
            for grp in groups.iter() {
                let gq = q.select(Axis(0), grp);
                let gk = k.select(Axis(0), grp);
                let gv = v.select(Axis(0), grp);
                let gg = g.select(Axis(0), grp);
                for h in 0..heads {
                    let cols = s![.., h * dh..(h + 1) * dh];
                    let (a, b, c) = head(&probs[idx], gg.slice(cols), gq.slice(cols), gk.slice(cols), gv.slice(cols));
                    idx += 1;
                    for (i, &r) in grp.iter().enumerate() {
                        let hc = s![r, h * dh..(h + 1) * dh];
                        let mut t = dq.slice_mut(hc);
                        t += &a.row(i);
                        let mut t = dk.slice_mut(hc);
                        t += &b.row(i);
                        let mut t = dv.slice_mut(hc);
                        t += &c.row(i);
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
