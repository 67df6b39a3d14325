//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a Wengert list: every operation appends a node holding its
//! forward value and the inputs it was computed from. Nodes are only ever
//! appended after their inputs, so walking the list backwards is a valid
//! reverse topological order and [`Graph::backward`] is deterministic.
//!
//! Parameters live outside the tape in a [`ParamStore`]; [`Graph::param`]
//! binds one as a leaf (once per graph) and [`ParamStore::accumulate`] folds
//! the leaf gradients back into the store after `backward`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::value::{matmul_at_raw, matmul_bt_raw};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    RowNormalize {
        input: Var,
        inv_norms: Vec<T>,
    },
    SpanMean(Var, Vec<(usize, usize)>),
    MulConst(Var, Tensor<T>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Activation used where the model leaves sigma open.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bound: HashMap<ParamId, Var>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    /// Untracked value (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf not owned by a parameter store.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter as a tracked leaf; repeated calls reuse the leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.input(store.value(id).clone());
        self.bound.insert(id, v);
        v
    }

    pub fn bindings(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.bound.iter().map(|(&p, &v)| (p, v))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn mat_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(mismatch(op, s, &[0, 0]));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.mat_dims("transpose", a)?;
        let out = self.value(a).transpose();
        let rg = self.rg(a);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(op, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    fn row_broadcast(&self, op: &'static str, a: Var, v: Var) -> Result<(usize, usize)> {
        let (m, n) = self.mat_dims(op, a)?;
        if self.shape(v) != [n] {
            return Err(mismatch(op, self.shape(a), self.shape(v)));
        }
        Ok((m, n))
    }

    /// `a[m×n] + v[n]` broadcast over rows (bias add).
    pub fn add_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let (_, n) = self.row_broadcast("add_row", a, v)?;
        let vv = self.value(v).data().to_vec();
        let out = self.value(a);
        let data = out.data().iter().enumerate().map(|(i, &x)| x + vv[i % n]).collect();
        let out = Tensor::new(out.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(out, Op::AddRow(a, v), rg))
    }

    /// `a[m×n] ∘ v[n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let (_, n) = self.row_broadcast("mul_row", a, v)?;
        let vv = self.value(v).data().to_vec();
        let out = self.value(a);
        let data = out.data().iter().enumerate().map(|(i, &x)| x * vv[i % n]).collect();
        let out = Tensor::new(out.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(v);
        Ok(self.push(out, Op::MulRow(a, v), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// `x` for `x > 0`, else `slope * x`.
    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { slope * x });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Relu => self.relu(a),
            Activation::Identity => a,
        }
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Softmax over the entries of each row where `mask` is true; masked
    /// entries are 0 and a row with no admitted entries is all zero.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        if mask.len() != self.value(a).numel() {
            return Err(mismatch("masked_softmax_rows", self.shape(a), &[mask.len()]));
        }
        self.softmax_impl(a, Some(mask))
    }

    fn softmax_impl(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.mat_dims("softmax_rows", a)?;
        let x = self.value(a);
        if x.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "softmax_rows" });
        }
        let admitted = |i: usize| mask.is_none_or(|mk| mk[i]);
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &x.data()[r * n..(r + 1) * n];
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if admitted(r * n + j) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let mut total = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if admitted(r * n + j) {
                    let e = (v - max).exp();
                    out[r * n + j] = e;
                    total = total + e;
                }
            }
            for o in &mut out[r * n..(r + 1) * n] {
                *o = *o / total;
            }
        }
        let out = Tensor::matrix(m, n, out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (m, c) = self.mat_dims("cross_entropy", logits)?;
        if labels.len() != m {
            return Err(mismatch("cross_entropy", &[m, c], &[labels.len()]));
        }
        if m == 0 {
            return Err(Error::invalid("cross_entropy over zero rows"));
        }
        let x = self.value(logits).data();
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite { op: "cross_entropy" });
        }
        let mut probs = vec![T::zero(); m * c];
        let mut loss = T::zero();
        for (r, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(Error::LabelOutOfRange {
                    row: r,
                    label,
                    classes: c,
                });
            }
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            loss = loss + (lse - row[label]);
            for (j, &v) in row.iter().enumerate() {
                probs[r * c + j] = (v - lse).exp();
            }
        }
        let out = Tensor::scalar(loss / T::lit(m as f64));
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum::<T>() / T::lit(v.numel().max(1) as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        self.mat_dims("gather_rows", a)?;
        let out = self.value(a).gather_rows(idx)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_cols of nothing"))?;
        let (m, _) = self.mat_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.mat_dims("concat_cols", p)?;
            if pm != m {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::matrix(m, total, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_rows of nothing"))?;
        let (_, n) = self.mat_dims("concat_rows", first)?;
        let mut rows = 0;
        for &p in parts {
            let (pm, pn) = self.mat_dims("concat_rows", p)?;
            if pn != n {
                return Err(mismatch("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += pm;
        }
        let mut data = Vec::with_capacity(rows * n);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::matrix(rows, n, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Scales each row to unit L2 norm; all-zero rows stay zero.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.mat_dims("row_normalize", a)?;
        let x = self.value(a);
        let mut inv_norms = Vec::with_capacity(m);
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = x.row(r);
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            let inv = if norm > T::zero() { T::one() / norm } else { T::zero() };
            inv_norms.push(inv);
            data.extend(row.iter().map(|&v| v * inv));
        }
        let out = Tensor::matrix(m, n, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::RowNormalize { input: a, inv_norms }, rg))
    }

    /// One output row per span: the mean of input rows `[start, end)`.
    pub fn span_mean(&mut self, a: Var, spans: &[(usize, usize)]) -> Result<Var> {
        let (m, n) = self.mat_dims("span_mean", a)?;
        let x = self.value(a);
        let mut data = Vec::with_capacity(spans.len() * n);
        for &(s, e) in spans {
            if s >= e {
                return Err(Error::invalid(format!("empty span [{s}, {e})")));
            }
            if e > m {
                return Err(Error::IndexOutOfRange { index: e - 1, len: m });
            }
            let inv = T::one() / T::lit((e - s) as f64);
            let mut acc = vec![T::zero(); n];
            for r in s..e {
                for (o, &v) in acc.iter_mut().zip(x.row(r)) {
                    *o = *o + v;
                }
            }
            data.extend(acc.into_iter().map(|v| v * inv));
        }
        let out = Tensor::matrix(spans.len(), n, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SpanMean(a, spans.to_vec()), rg))
    }

    /// Elementwise product with a fixed tensor; gradients never flow into `c`.
    pub fn mul_const(&mut self, a: Var, c: Tensor<T>) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != c.shape() {
            return Err(mismatch("mul_const", x.shape(), c.shape()));
        }
        let data = x.data().iter().zip(c.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulConst(a, c), rg))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)`; identity when
    /// not training.
    pub fn dropout(&mut self, a: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = T::lit(1.0 / (1.0 - rate));
        let shape = self.shape(a).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        self.mul_const(a, Tensor::new(shape, mask)?)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![T::one()])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn acc_data(&self, grads: &mut [Option<Tensor<T>>], v: Var, data: Vec<T>) -> Result<()> {
        if self.rg(v) {
            let t = Tensor::new(self.shape(v).to_vec(), data)?;
            self.acc(grads, v, t);
        }
        Ok(())
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.rg(*a) {
                    self.acc_data(grads, *a, matmul_bt_raw(gd, vb.data(), m, n, k))?;
                }
                if self.rg(*b) {
                    self.acc_data(grads, *b, matmul_at_raw(va.data(), gd, m, k, n))?;
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    self.acc_data(grads, *a, gd.iter().zip(vb).map(|(&x, &y)| x * y).collect())?;
                }
                if self.rg(*b) {
                    self.acc_data(grads, *b, gd.iter().zip(va).map(|(&x, &y)| x * y).collect())?;
                }
            }
            Op::Scale(a, c) => self.acc(grads, *a, g.map(|x| x * *c)),
            Op::AddRow(a, v) => {
                self.acc(grads, *a, g.clone());
                if self.rg(*v) {
                    let n = self.value(*v).numel();
                    let mut gv = vec![T::zero(); n];
                    for (i, &x) in gd.iter().enumerate() {
                        gv[i % n] = gv[i % n] + x;
                    }
                    self.acc_data(grads, *v, gv)?;
                }
            }
            Op::MulRow(a, v) => {
                let vv = self.value(*v).data();
                let va = self.value(*a).data();
                let n = vv.len();
                if self.rg(*a) {
                    self.acc_data(grads, *a, gd.iter().enumerate().map(|(i, &x)| x * vv[i % n]).collect())?;
                }
                if self.rg(*v) {
                    let mut gv = vec![T::zero(); n];
                    for (i, (&x, &y)) in gd.iter().zip(va).enumerate() {
                        gv[i % n] = gv[i % n] + x * y;
                    }
                    self.acc_data(grads, *v, gv)?;
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(va)
                    .map(|(&x, &y)| if y > T::zero() { x } else { T::zero() })
                    .collect();
                self.acc_data(grads, *a, d)?;
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(va)
                    .map(|(&x, &y)| if y > T::zero() { x } else { x * *slope })
                    .collect();
                self.acc_data(grads, *a, d)?;
            }
            Op::Softmax(a) => {
                let (m, n) = (out.rows(), out.cols());
                let y = out.data();
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &gd[r * n..(r + 1) * n];
                    let dot: T = ys.iter().zip(gs).map(|(&p, &q)| p * q).sum();
                    for j in 0..n {
                        d[r * n + j] = ys[j] * (gs[j] - dot);
                    }
                }
                self.acc_data(grads, *a, d)?;
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let m = labels.len();
                let c = probs.len() / m;
                let scale = gd[0] / T::lit(m as f64);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * c + l] = d[r * c + l] - scale;
                }
                self.acc_data(grads, *logits, d)?;
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                self.acc_data(grads, *a, vec![gd[0]; n])?;
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                self.acc_data(grads, *a, vec![gd[0] / T::lit(n.max(1) as f64); n])?;
            }
            Op::GatherRows(a, idx) => {
                if self.rg(*a) {
                    let va = self.value(*a);
                    let n = va.cols();
                    let mut d = vec![T::zero(); va.numel()];
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..n {
                            d[i * n + j] = d[i * n + j] + gd[r * n + j];
                        }
                    }
                    self.acc_data(grads, *a, d)?;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = (out.rows(), out.cols());
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for r in 0..m {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        self.acc_data(grads, p, d)?;
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.rg(p) {
                        self.acc_data(grads, p, gd[offset..offset + len].to_vec())?;
                    }
                    offset += len;
                }
            }
            Op::RowNormalize { input, inv_norms } => {
                let n = out.cols();
                let y = out.data();
                let mut d = vec![T::zero(); y.len()];
                for (r, &inv) in inv_norms.iter().enumerate() {
                    if inv == T::zero() {
                        continue;
                    }
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &gd[r * n..(r + 1) * n];
                    let dot: T = ys.iter().zip(gs).map(|(&p, &q)| p * q).sum();
                    for j in 0..n {
                        d[r * n + j] = (gs[j] - ys[j] * dot) * inv;
                    }
                }
                self.acc_data(grads, *input, d)?;
            }
            Op::SpanMean(a, spans) => {
                if self.rg(*a) {
                    let va = self.value(*a);
                    let n = va.cols();
                    let mut d = vec![T::zero(); va.numel()];
                    for (k, &(s, e)) in spans.iter().enumerate() {
                        let inv = T::one() / T::lit((e - s) as f64);
                        for r in s..e {
                            for j in 0..n {
                                d[r * n + j] = d[r * n + j] + gd[k * n + j] * inv;
                            }
                        }
                    }
                    self.acc_data(grads, *a, d)?;
                }
            }
            Op::MulConst(a, c) => {
                let d = gd.iter().zip(c.data()).map(|(&x, &y)| x * y).collect();
                self.acc_data(grads, *a, d)?;
            }
        }
        Ok(())
    }
}

impl<T: Scalar> ParamStore<T> {
    /// Adds the gradients of every parameter bound on `graph` into the store.
    pub fn accumulate(&mut self, graph: &Graph<T>, grads: &Gradients<T>) {
        for (id, var) in graph.bindings() {
            let p = self.get_mut(id);
            let delta = grads
                .get(var)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
            match &mut p.grad {
                Some(g) => g.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        }
    }
}
