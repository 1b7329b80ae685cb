//! Recorded forward computation with reverse-mode gradient replay.
//!
//! Every operation appends its output to the tape together with the inputs it
//! read, so the recording order is already a topological order. `backward`
//! walks the records once in reverse and sums gradients into the inputs.

use std::sync::Arc;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::segment::segment_softmax_into;
use super::tensor::{gemm_into, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    HeadDot(Var, Var),
    HeadScale(Var, Var),
    Sum(Var),
    Mean(Var),
    Mask(Var, Vec<T>),
    Bce {
        logits: Var,
        targets: Vec<T>,
        weights: Vec<T>,
        denom: T,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterAddRows(..) => "scatter_add_rows",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::HeadDot(..) => "head_dot",
            Op::HeadScale(..) => "head_scale",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Mask(..) => "dropout",
            Op::Bce { .. } => "bce_with_logits",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Single-writer recording of a forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    needs_grad: Vec<bool>,
    bindings: Vec<(Var, ParamId)>,
    fault: Option<&'static str>,
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus_t<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            needs_grad: Vec::new(),
            bindings: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(op.name());
        }
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        Var(self.values.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.needs_grad[v.0]
    }

    /// First operation that produced a NaN or infinity, if any.
    pub fn fault(&self) -> Option<&'static str> {
        self.fault
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.fault {
            Some(op) => Err(Error::NonFinite(op)),
            None => Ok(()),
        }
    }

    /// Records an input that gradients never flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Records an input whose gradient is wanted.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Loads a parameter; its gradient is routed back by [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.variable(store.value(id).clone());
        self.bindings.push((v, id));
        v
    }

    pub(crate) fn bindings(&self) -> &[(Var, ParamId)] {
        &self.bindings
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.values[v.0].shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), out, ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(name, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |p, q| p + q)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Add(a, b), out, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |p, q| p - q)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Sub(a, b), out, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |p, q| p * q)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Mul(a, b), out, ng))
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::shape("add_row", x.shape(), r.shape()));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o = *o + b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(Op::AddRow(a, row), out, ng))
    }

    /// Sum of several same-shape values, recorded as a left fold of `add`.
    pub fn add_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts
            .split_first()
            .ok_or_else(|| Error::Contract("add_all of nothing".into()))?;
        rest.iter().try_fold(first, |acc, &p| self.add(acc, p))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(Op::Scale(a, c), out, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let ng = self.ng(a);
        self.push(Op::Relu(a), out, ng)
    }

    /// Elementwise `max(x, slope·x)` for `slope ∈ [0, 1)`.
    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        if !(slope >= T::zero() && slope < T::one()) {
            return Err(Error::Contract(format!("leaky_relu slope {slope:?} outside [0, 1)")));
        }
        let out = self.value(a).map(|x| if x > T::zero() { x } else { slope * x });
        let ng = self.ng(a);
        Ok(self.push(Op::LeakyRelu(a, slope), out, ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(Op::Sigmoid(a), out, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(Op::Tanh(a), out, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::Contract("concat_cols of nothing".into()))?;
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::shape("concat_cols", (rows, cols), s));
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let src = &self.values[p.0];
            let w = src.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + w].copy_from_slice(src.row(r));
            }
            offset += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), out, ng))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let x = self.value(a);
        if start + width > x.cols() {
            return Err(Error::shape("slice_cols", x.shape(), (start, width)));
        }
        let out = Tensor::from_fn(x.rows(), width, |r, c| x.get(r, start + c));
        let ng = self.ng(a);
        Ok(self.push(Op::SliceCols(a, start), out, ng))
    }

    /// Row `i` of the output is row `idx[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::Range {
                what: "gather_rows source".into(),
                index: bad,
                len: x.rows(),
            });
        }
        let out = x.select_rows(&idx);
        let ng = self.ng(a);
        Ok(self.push(Op::GatherRows(a, idx), out, ng))
    }

    /// Row `i` of `a` is summed into output row `idx[i]`; the output has `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, rows: usize) -> Result<Var> {
        let x = self.value(a);
        if idx.len() != x.rows() {
            return Err(Error::shape("scatter_add_rows", x.shape(), (idx.len(), 1)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Range {
                what: "scatter_add_rows target".into(),
                index: bad,
                len: rows,
            });
        }
        let mut out = Tensor::zeros(rows, x.cols());
        for (i, &t) in idx.iter().enumerate() {
            for (o, &v) in out.row_mut(t).iter_mut().zip(x.row(i)) {
                *o = *o + v;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(Op::ScatterAddRows(a, idx), out, ng))
    }

    /// Column-wise softmax over rows sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, segment_of: Arc<[usize]>, num_segments: usize) -> Result<Var> {
        let x = self.value(a);
        if segment_of.len() != x.rows() {
            return Err(Error::shape("segment_softmax", x.shape(), (segment_of.len(), 1)));
        }
        if let Some(&bad) = segment_of.iter().find(|&&s| s >= num_segments) {
            return Err(Error::Range {
                what: "segment id".into(),
                index: bad,
                len: num_segments,
            });
        }
        let mut out = Tensor::zeros(x.rows(), x.cols());
        segment_softmax_into(x.data(), x.cols(), &segment_of, num_segments, out.data_mut());
        let ng = self.ng(a);
        Ok(self.push(Op::SegmentSoftmax(a, segment_of, num_segments), out, ng))
    }

    /// Per-head dot products: `x` is `[n × heads·w]`, `a` is `[1 × heads·w]`,
    /// the result is `[n × heads]`.
    pub fn head_dot(&mut self, x: Var, a: Var, heads: usize) -> Result<Var> {
        let (xv, av) = (self.value(x), self.value(a));
        if av.rows() != 1 || av.cols() != xv.cols() || heads == 0 || xv.cols() % heads != 0 {
            return Err(Error::shape("head_dot", xv.shape(), av.shape()));
        }
        let w = xv.cols() / heads;
        let out = Tensor::from_fn(xv.rows(), heads, |r, k| {
            let row = &xv.row(r)[k * w..(k + 1) * w];
            row.iter().zip(&av.data()[k * w..(k + 1) * w]).map(|(&p, &q)| p * q).sum()
        });
        let ng = self.ng(x) || self.ng(a);
        Ok(self.push(Op::HeadDot(x, a), out, ng))
    }

    /// Scales head block `k` of each row of `m` (`[n × heads·w]`) by `alpha[row, k]`.
    pub fn head_scale(&mut self, m: Var, alpha: Var) -> Result<Var> {
        let (mv, av) = (self.value(m), self.value(alpha));
        let heads = av.cols();
        if av.rows() != mv.rows() || heads == 0 || mv.cols() % heads != 0 {
            return Err(Error::shape("head_scale", mv.shape(), av.shape()));
        }
        let w = mv.cols() / heads;
        let out = Tensor::from_fn(mv.rows(), mv.cols(), |r, c| mv.get(r, c) * av.get(r, c / w));
        let ng = self.ng(m) || self.ng(alpha);
        Ok(self.push(Op::HeadScale(m, alpha), out, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        let ng = self.ng(a);
        self.push(Op::Sum(a), Tensor::scalar(s), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s: T = x.data().iter().copied().sum::<T>() / T::from_f64(x.len() as f64);
        let ng = self.ng(a);
        Ok(self.push(Op::Mean(a), Tensor::scalar(s), ng))
    }

    /// Inverted dropout. Outside training, or at rate 0, returns `a` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Contract(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let x = self.value(a);
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        let ng = self.ng(a);
        Ok(self.push(Op::Mask(a, mask), out, ng))
    }

    /// Weighted mean binary cross-entropy on logits (one column).
    ///
    /// `weights` of zero mask rows out; the mean is over the total weight.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T], weights: &[T]) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || z.rows() != targets.len() || targets.len() != weights.len() {
            return Err(Error::shape("bce_with_logits", z.shape(), (targets.len(), weights.len())));
        }
        let denom: T = weights.iter().copied().sum();
        if denom <= T::zero() {
            return Err(Error::Contract("binary cross-entropy over an empty batch".into()));
        }
        let mut total = T::zero();
        for ((&zi, &yi), &wi) in z.data().iter().zip(targets).zip(weights) {
            if wi != T::zero() {
                total = total + wi * (softplus_t(zi) - zi * yi);
            }
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Op::Bce {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                denom,
            },
            Tensor::scalar(total / denom),
            ng,
        ))
    }

    /// Mean negative log-softmax of the labelled class for each row.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != labels.len() {
            return Err(Error::shape("cross_entropy", z.shape(), (labels.len(), 1)));
        }
        if labels.is_empty() {
            return Err(Error::Contract("cross-entropy over an empty batch".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= z.cols()) {
            return Err(Error::Range {
                what: "class label".into(),
                index: bad,
                len: z.cols(),
            });
        }
        let mut total = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            let row = z.row(r);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            total = total + lse - row[l];
        }
        let n = T::from_f64(labels.len() as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            Tensor::scalar(total / n),
            ng,
        ))
    }

    /// Replays the tape backward from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check_finite()?;
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward seed must be scalar, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut Tensor<T>> {
        if !self.needs_grad[v.0] {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(r, c)))
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &self.values[i];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(s) = self.slot(grads, *a) {
                    gemm_into(g, false, bv, true, T::one(), s);
                }
                if let Some(s) = self.slot(grads, *b) {
                    gemm_into(av, true, g, false, T::one(), s);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(s) = self.slot(grads, *v) {
                        s.add_assign(g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.add_assign(g);
                }
                if let Some(s) = self.slot(grads, *b) {
                    for (o, &d) in s.data_mut().iter_mut().zip(g.data()) {
                        *o = *o - d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(s) = self.slot(grads, *a) {
                    for ((o, &d), &y) in s.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                        *o = *o + d * y;
                    }
                }
                if let Some(s) = self.slot(grads, *b) {
                    for ((o, &d), &x) in s.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *o = *o + d * x;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(s) = self.slot(grads, *a) {
                    s.add_assign(g);
                }
                if let Some(s) = self.slot(grads, *row) {
                    for r in 0..g.rows() {
                        for (o, &d) in s.data_mut().iter_mut().zip(g.row(r)) {
                            *o = *o + d;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (o, &d) in s.data_mut().iter_mut().zip(g.data()) {
                        *o = *o + d * *c;
                    }
                }
            }
            Op::Relu(a) | Op::LeakyRelu(a, _) => {
                let slope = match &self.ops[i] {
                    Op::LeakyRelu(_, s) => *s,
                    _ => T::zero(),
                };
                let x = self.value(*a);
                if let Some(s) = self.slot(grads, *a) {
                    for ((o, &d), &v) in s.data_mut().iter_mut().zip(g.data()).zip(x.data()) {
                        *o = *o + if v > T::zero() { d } else { d * slope };
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for ((o, &d), &y) in s.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *o = *o + d * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(s) = self.slot(grads, *a) {
                    for ((o, &d), &y) in s.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *o = *o + d * (T::one() - y * y);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if let Some(s) = self.slot(grads, *p) {
                        for r in 0..g.rows() {
                            for (o, &d) in s.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o = *o + d;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let w = out.cols();
                if let Some(s) = self.slot(grads, *a) {
                    for r in 0..g.rows() {
                        for (o, &d) in s.row_mut(r)[*start..*start + w].iter_mut().zip(g.row(r)) {
                            *o = *o + d;
                        }
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, &d) in s.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o = *o + d;
                        }
                    }
                }
            }
            Op::ScatterAddRows(a, idx) => {
                if let Some(s) = self.slot(grads, *a) {
                    for (r, &dst) in idx.iter().enumerate() {
                        for (o, &d) in s.row_mut(r).iter_mut().zip(g.row(dst)) {
                            *o = *o + d;
                        }
                    }
                }
            }
            Op::SegmentSoftmax(a, seg, nseg) => {
                let heads = out.cols();
                let mut dot = vec![T::zero(); nseg * heads];
                for (e, &sg) in seg.iter().enumerate() {
                    for k in 0..heads {
                        dot[sg * heads + k] = dot[sg * heads + k] + out.get(e, k) * g.get(e, k);
                    }
                }
                if let Some(s) = self.slot(grads, *a) {
                    for (e, &sg) in seg.iter().enumerate() {
                        for k in 0..heads {
                            let y = out.get(e, k);
                            let cur = s.get(e, k);
                            s.set(e, k, cur + y * (g.get(e, k) - dot[sg * heads + k]));
                        }
                    }
                }
            }
            Op::HeadDot(x, a) => {
                let (xv, av) = (self.value(*x), self.value(*a));
                let heads = out.cols();
                let w = xv.cols() / heads;
                if let Some(s) = self.slot(grads, *x) {
                    for r in 0..xv.rows() {
                        let grow = g.row(r);
                        for (c, o) in s.row_mut(r).iter_mut().enumerate() {
                            *o = *o + grow[c / w] * av.data()[c];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *a) {
                    let sd = s.data_mut();
                    for r in 0..xv.rows() {
                        let grow = g.row(r);
                        for (c, &xv) in xv.row(r).iter().enumerate() {
                            sd[c] = sd[c] + grow[c / w] * xv;
                        }
                    }
                }
            }
            Op::HeadScale(m, alpha) => {
                let (mv, av) = (self.value(*m), self.value(*alpha));
                let w = mv.cols() / av.cols();
                if let Some(s) = self.slot(grads, *m) {
                    for r in 0..mv.rows() {
                        let (grow, arow) = (g.row(r), av.row(r));
                        for (c, o) in s.row_mut(r).iter_mut().enumerate() {
                            *o = *o + grow[c] * arow[c / w];
                        }
                    }
                }
                if let Some(s) = self.slot(grads, *alpha) {
                    for r in 0..mv.rows() {
                        let (grow, mrow) = (g.row(r), mv.row(r));
                        let srow = s.row_mut(r);
                        for c in 0..mrow.len() {
                            srow[c / w] = srow[c / w] + grow[c] * mrow[c];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let d = g.data()[0];
                if let Some(s) = self.slot(grads, *a) {
                    s.data_mut().iter_mut().for_each(|o| *o = *o + d);
                }
            }
            Op::Mean(a) => {
                let n = T::from_f64(self.value(*a).len() as f64);
                let d = g.data()[0] / n;
                if let Some(s) = self.slot(grads, *a) {
                    s.data_mut().iter_mut().for_each(|o| *o = *o + d);
                }
            }
            Op::Mask(a, mask) => {
                if let Some(s) = self.slot(grads, *a) {
                    for ((o, &d), &m) in s.data_mut().iter_mut().zip(g.data()).zip(mask) {
                        *o = *o + d * m;
                    }
                }
            }
            Op::Bce {
                logits,
                targets,
                weights,
                denom,
            } => {
                let d = g.data()[0] / *denom;
                let z = self.value(*logits);
                if let Some(s) = self.slot(grads, *logits) {
                    for (r, o) in s.data_mut().iter_mut().enumerate() {
                        *o = *o + d * weights[r] * (sigmoid(z.data()[r]) - targets[r]);
                    }
                }
            }
            Op::CrossEntropy { logits, labels } => {
                let z = self.value(*logits);
                let d = g.data()[0] / T::from_f64(labels.len() as f64);
                if let Some(s) = self.slot(grads, *logits) {
                    for (r, &l) in labels.iter().enumerate() {
                        let row = z.row(r);
                        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                        let denom: T = row.iter().map(|&v| (v - m).exp()).sum();
                        for (c, o) in s.row_mut(r).iter_mut().enumerate() {
                            let p = (row[c] - m).exp() / denom;
                            let y = if c == l { T::one() } else { T::zero() };
                            *o = *o + d * (p - y);
                        }
                    }
                }
            }
        }
    }
}
