//! Reverse-mode differentiation over a linear tape.
//!
//! Every op records its output value and enough saved state to run its
//! vector-Jacobian product. A node participates in the backward sweep only
//! when it depends on a trainable leaf or on a [`Tape::watch`] point, so frozen
//! sub-graphs cost nothing during backpropagation.
//!
//! Conventions:
//! * matrices are row-major; `[.., k] x [k, n]` treats leading axes as rows;
//! * layer normalization runs over the trailing axis with `LN_EPS` inside the
//!   square root and the biased variance;
//! * GELU is the tanh approximation
//!   `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`;
//! * cross-entropy is averaged over the batch rows.

use std::collections::BTreeSet;

use super::tensor::{gemm, Tensor};
use crate::error::{shape_err, Error, Result};

pub const LN_EPS: f64 = 1e-6;

const GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Watch(Var),
    StopGrad,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Add(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Sum(Var),
    Mean(Var),
    LayerNorm { x: Var, affine: Option<(Var, Var)>, normalized: Vec<f64>, rstd: Vec<f64> },
    Softmax(Var),
    Gelu(Var),
    Relu(Var),
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    SplitHeads { x: Var, heads: usize },
    MergeHeads { x: Var, heads: usize },
    MeanTokens(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    region: Option<u32>,
}

/// Recorded computation. Build it forward with the op methods, then call
/// [`Tape::backward`] on a scalar output.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    region: Option<u32>,
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    regions: BTreeSet<u32>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Regions (see [`Tape::set_region`]) in which at least one node received
    /// a gradient.
    pub fn regions(&self) -> &BTreeSet<u32> {
        &self.regions
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tag subsequently recorded nodes with `region`. Used to count how many
    /// distinct blocks take part in the backward sweep.
    pub fn set_region(&mut self, region: Option<u32>) {
        self.region = region;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        self.nodes.push(Node { value, op, requires_grad, region: self.region });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad, "leaf")
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Identity that starts gradient flow, so `backward` reports dL/dx here
    /// even when nothing upstream is trainable.
    pub fn watch(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).clone();
        self.push(value, Op::Watch(x), true, "watch")
    }

    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).clone();
        self.push(value, Op::StopGrad, false, "stop_gradient")
    }

    /// `[.., k] x [k, n] -> [.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.shape().is_empty() || av.last_dim() != bv.shape()[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", av.shape(), bv.shape())));
        }
        let (rows, k, n) = (av.rows(), bv.shape()[0], bv.shape()[1]);
        let mut out = vec![0.0; rows * n];
        gemm(rows, k, n, av.data(), false, bv.data(), false, &mut out, 0.0);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), rg, "matmul")
    }

    /// Batched product `[g, m, k] x [g, k, n]`, or `[g, m, k] x [g, n, k]^T`
    /// when `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let bad = || shape_err("batch_matmul", format!("{:?} x {:?}", av.shape(), bv.shape()));
        if av.shape().len() != 3 || bv.shape().len() != 3 || av.shape()[0] != bv.shape()[0] {
            return Err(bad());
        }
        let (g, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let (bk, n) = if trans_b {
            (bv.shape()[2], bv.shape()[1])
        } else {
            (bv.shape()[1], bv.shape()[2])
        };
        if bk != k {
            return Err(bad());
        }
        let mut out = vec![0.0; g * m * n];
        for i in 0..g {
            gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..(i + 1) * m * k],
                false,
                &bv.data()[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(vec![g, m, n], out)?, Op::BatchMatMul { a, b, trans_b }, rg, "batch_matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg, "transpose")
    }

    /// Element-wise `a + b`, where `b`'s shape is a suffix of `a`'s and is
    /// broadcast over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add", format!("{:?} + {:?}", sa, sb)));
        }
        let mut out = av.clone();
        let bl = bv.len().max(1);
        for chunk in out.data_mut().chunks_mut(bl) {
            for (o, v) in chunk.iter_mut().zip(bv.data()) {
                *o += v;
            }
        }
        let rg = self.rg(&[a, b]);
        self.push(out, Op::Add(a, b), rg, "add")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg, "scale")
    }

    /// `s * a` for a one-element tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("mul_scalar", format!("scale has shape {:?}", self.value(s).shape())));
        }
        let c = self.value(s).item();
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(&[a, s]);
        self.push(out, Op::MulScalar(a, s), rg, "mul_scalar")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::Sum(a), rg, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(shape_err("mean", "empty tensor"));
        }
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        let rg = self.rg(&[a]);
        self.push(out, Op::Mean(a), rg, "mean")
    }

    /// Normalize over the trailing axis, then optionally apply `(gain, bias)`.
    pub fn layer_norm(&mut self, x: Var, affine: Option<(Var, Var)>) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if let Some((g, b)) = affine {
            if self.value(g).shape() != [d] || self.value(b).shape() != [d] {
                return Err(shape_err("layer_norm", format!("affine params must be [{d}]")));
            }
        }
        let rows = xv.rows();
        let mut normalized = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        for (r, (row, out)) in xv.data().chunks(d).zip(normalized.chunks_mut(d)).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = s;
            for (o, v) in out.iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let mut out = normalized.clone();
        if let Some((g, b)) = affine {
            let (gv, bv) = (self.value(g).data(), self.value(b).data());
            for row in out.chunks_mut(d) {
                for ((o, gi), bi) in row.iter_mut().zip(gv).zip(bv) {
                    *o = *o * gi + bi;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let mut inputs = vec![x];
        if let Some((g, b)) = affine {
            inputs.extend([g, b]);
        }
        let rg = self.rg(&inputs);
        self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, affine, normalized, rstd }, rg, "layer_norm")
    }

    /// Softmax over the trailing axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        let d = out.last_dim();
        for row in out.data_mut().chunks_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::Softmax(a), rg, "softmax")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(gelu);
        let rg = self.rg(&[a]);
        self.push(out, Op::Gelu(a), rg, "gelu")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg, "relu")
    }

    /// Row lookup: `ids` laid out as `ids_shape` -> `ids_shape + [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(shape_err("embedding", format!("table {:?}, ids {:?}", tv.shape(), ids_shape)));
        }
        let (vocab, d) = (tv.shape()[0], tv.shape()[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::OutOfRange(format!("token id {bad} >= vocabulary size {vocab}")));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let rg = self.rg(&[table]);
        self.push(Tensor::new(shape, out)?, Op::Embedding { table, ids: ids.to_vec() }, rg, "embedding")
    }

    /// Mean cross-entropy of `[batch, classes]` logits against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape().len() != 2 || lv.shape()[0] != labels.len() || labels.is_empty() {
            return Err(shape_err(
                "cross_entropy",
                format!("logits {:?} vs {} labels", lv.shape(), labels.len()),
            ));
        }
        let c = lv.shape()[1];
        if let Some(bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::OutOfRange(format!("label {bad} >= class count {c}")));
        }
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for ((row, p), &y) in lv.data().chunks(c).zip(probs.chunks_mut(c)).zip(labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + total.ln();
            for (pi, v) in p.iter_mut().zip(row) {
                *pi = (v - lse).exp();
            }
            loss += lse - row[y];
        }
        loss /= labels.len() as f64;
        let rg = self.rg(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), probs },
            rg,
            "cross_entropy",
        )
    }

    /// `[b, t, h*e] -> [b*h, t, e]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(shape_err("split_heads", format!("{:?} into {heads} heads", s)));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let e = d / heads;
        let mut out = vec![0.0; xv.len()];
        let src = xv.data();
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let from = (bi * t + ti) * d + h * e;
                    let to = ((bi * heads + h) * t + ti) * e;
                    out[to..to + e].copy_from_slice(&src[from..from + e]);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![b * heads, t, e], out)?, Op::SplitHeads { x, heads }, rg, "split_heads")
    }

    /// `[b*h, t, e] -> [b, t, h*e]`.
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 {
            return Err(shape_err("merge_heads", format!("{:?} from {heads} heads", s)));
        }
        let (bh, t, e) = (s[0], s[1], s[2]);
        let b = bh / heads;
        let d = heads * e;
        let mut out = vec![0.0; xv.len()];
        let src = xv.data();
        for bi in 0..b {
            for ti in 0..t {
                for h in 0..heads {
                    let from = ((bi * heads + h) * t + ti) * e;
                    let to = (bi * t + ti) * d + h * e;
                    out[to..to + e].copy_from_slice(&src[from..from + e]);
                }
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![b, t, d], out)?, Op::MergeHeads { x, heads }, rg, "merge_heads")
    }

    /// Average over the token axis, `[b, t, d] -> [b, d]`.
    pub fn mean_tokens(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 3 || s[1] == 0 {
            return Err(shape_err("mean_tokens", format!("{:?}", s)));
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        let mut out = vec![0.0; b * d];
        for bi in 0..b {
            let o = &mut out[bi * d..(bi + 1) * d];
            for ti in 0..t {
                let row = &xv.data()[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                for (a, v) in o.iter_mut().zip(row) {
                    *a += v;
                }
            }
            for a in o.iter_mut() {
                *a /= t as f64;
            }
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(vec![b, d], out)?, Op::MeanTokens(x), rg, "mean_tokens")
    }

    /// Backpropagate from the scalar `loss`. Only nodes that depend on a
    /// trainable leaf or a watch point receive gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut regions = BTreeSet::new();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads, regions });
        }
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some(r) = node.region {
                regions.insert(r);
            }
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, regions })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf | Op::StopGrad => {}
            Op::Watch(x) => {
                if needs(*x) {
                    accumulate(grads, *x, g.clone());
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (rows, k, n) = (av.rows(), bv.shape()[0], bv.shape()[1]);
                if needs(*a) {
                    let mut da = vec![0.0; rows * k];
                    gemm(rows, n, k, g.data(), false, bv.data(), true, &mut da, 0.0);
                    accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                }
                if needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, rows, n, av.data(), true, g.data(), false, &mut db, 0.0);
                    accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db)?);
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (groups, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = g.shape()[2];
                if needs(*a) {
                    let mut da = vec![0.0; av.len()];
                    for i in 0..groups {
                        gemm(
                            m,
                            n,
                            k,
                            &g.data()[i * m * n..(i + 1) * m * n],
                            false,
                            &bv.data()[i * k * n..(i + 1) * k * n],
                            !trans_b,
                            &mut da[i * m * k..(i + 1) * m * k],
                            0.0,
                        );
                    }
                    accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                }
                if needs(*b) {
                    let mut db = vec![0.0; bv.len()];
                    for i in 0..groups {
                        let gi = &g.data()[i * m * n..(i + 1) * m * n];
                        let ai = &av.data()[i * m * k..(i + 1) * m * k];
                        let out = &mut db[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            // d(B^T) stored as [n, k] = g^T a
                            gemm(n, m, k, gi, true, ai, false, out, 0.0);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, out, 0.0);
                        }
                    }
                    accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db)?);
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    accumulate(grads, *a, g.transpose()?);
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    let bv = self.value(*b);
                    let bl = bv.len().max(1);
                    let mut db = vec![0.0; bv.len()];
                    for chunk in g.data().chunks(bl) {
                        for (o, v) in db.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db)?);
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    accumulate(grads, *a, g.map(|v| v * c));
                }
            }
            Op::MulScalar(a, s) => {
                let c = self.value(*s).item();
                if needs(*a) {
                    accumulate(grads, *a, g.map(|v| v * c));
                }
                if needs(*s) {
                    let ds: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                    accumulate(grads, *s, Tensor::filled(self.value(*s).shape(), ds));
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    accumulate(grads, *a, Tensor::filled(self.value(*a).shape(), g.item()));
                }
            }
            Op::Mean(a) => {
                if needs(*a) {
                    let av = self.value(*a);
                    accumulate(grads, *a, Tensor::filled(av.shape(), g.item() / av.len() as f64));
                }
            }
            Op::LayerNorm { x, affine, normalized, rstd } => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let gain = affine.map(|(gn, _)| self.value(gn).data());
                if needs(*x) {
                    let mut dx = vec![0.0; xv.len()];
                    let mut dyh = vec![0.0; d];
                    for (r, ((gr, yr), out)) in g
                        .data()
                        .chunks(d)
                        .zip(normalized.chunks(d))
                        .zip(dx.chunks_mut(d))
                        .enumerate()
                    {
                        for i in 0..d {
                            dyh[i] = gr[i] * gain.map_or(1.0, |gn| gn[i]);
                        }
                        let mean_dy = dyh.iter().sum::<f64>() / d as f64;
                        let mean_dyy = dyh.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for i in 0..d {
                            out[i] = rstd[r] * (dyh[i] - mean_dy - yr[i] * mean_dyy);
                        }
                    }
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if let Some((gn, bn)) = affine {
                    if needs(*gn) {
                        let mut dg = vec![0.0; d];
                        for (gr, yr) in g.data().chunks(d).zip(normalized.chunks(d)) {
                            for i in 0..d {
                                dg[i] += gr[i] * yr[i];
                            }
                        }
                        accumulate(grads, *gn, Tensor::new(vec![d], dg)?);
                    }
                    if needs(*bn) {
                        let mut db = vec![0.0; d];
                        for gr in g.data().chunks(d) {
                            for i in 0..d {
                                db[i] += gr[i];
                            }
                        }
                        accumulate(grads, *bn, Tensor::new(vec![d], db)?);
                    }
                }
            }
            Op::Softmax(a) => {
                if needs(*a) {
                    let y = &node.value;
                    let d = y.last_dim();
                    let mut dx = vec![0.0; y.len()];
                    for ((yr, gr), out) in y.data().chunks(d).zip(g.data().chunks(d)).zip(dx.chunks_mut(d)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for i in 0..d {
                            out[i] = yr[i] * (gr[i] - dot);
                        }
                    }
                    accumulate(grads, *a, Tensor::new(y.shape().to_vec(), dx)?);
                }
            }
            Op::Gelu(a) => {
                if needs(*a) {
                    let xv = self.value(*a);
                    let dx = xv.data().iter().zip(g.data()).map(|(&x, gi)| gelu_grad(x) * gi).collect();
                    accumulate(grads, *a, Tensor::new(xv.shape().to_vec(), dx)?);
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let xv = self.value(*a);
                    let dx = xv
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, gi)| if x > 0.0 { *gi } else { 0.0 })
                        .collect();
                    accumulate(grads, *a, Tensor::new(xv.shape().to_vec(), dx)?);
                }
            }
            Op::Embedding { table, ids } => {
                if needs(*table) {
                    let tv = self.value(*table);
                    let d = tv.shape()[1];
                    let mut dt = vec![0.0; tv.len()];
                    for (&i, gr) in ids.iter().zip(g.data().chunks(d)) {
                        for (o, v) in dt[i * d..(i + 1) * d].iter_mut().zip(gr) {
                            *o += v;
                        }
                    }
                    accumulate(grads, *table, Tensor::new(tv.shape().to_vec(), dt)?);
                }
            }
            Op::CrossEntropy { logits, labels, probs } => {
                if needs(*logits) {
                    let lv = self.value(*logits);
                    let c = lv.shape()[1];
                    let scale = g.item() / labels.len() as f64;
                    let mut dl = probs.clone();
                    for (row, &y) in dl.chunks_mut(c).zip(labels) {
                        row[y] -= 1.0;
                        for v in row.iter_mut() {
                            *v *= scale;
                        }
                    }
                    accumulate(grads, *logits, Tensor::new(lv.shape().to_vec(), dl)?);
                }
            }
            Op::SplitHeads { x, heads } => {
                if needs(*x) {
                    let xv = self.value(*x);
                    let (b, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let e = d / heads;
                    let mut dx = vec![0.0; xv.len()];
                    for bi in 0..b {
                        for ti in 0..t {
                            for h in 0..*heads {
                                let to = (bi * t + ti) * d + h * e;
                                let from = ((bi * heads + h) * t + ti) * e;
                                dx[to..to + e].copy_from_slice(&g.data()[from..from + e]);
                            }
                        }
                    }
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
            }
            Op::MergeHeads { x, heads } => {
                if needs(*x) {
                    let xv = self.value(*x);
                    let (bh, t, e) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let b = bh / heads;
                    let d = heads * e;
                    let mut dx = vec![0.0; xv.len()];
                    for bi in 0..b {
                        for ti in 0..t {
                            for h in 0..*heads {
                                let to = ((bi * heads + h) * t + ti) * e;
                                let from = (bi * t + ti) * d + h * e;
                                dx[to..to + e].copy_from_slice(&g.data()[from..from + e]);
                            }
                        }
                    }
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
            }
            Op::MeanTokens(x) => {
                if needs(*x) {
                    let xv = self.value(*x);
                    let (b, t, d) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let mut dx = vec![0.0; xv.len()];
                    for bi in 0..b {
                        let gr = &g.data()[bi * d..(bi + 1) * d];
                        for ti in 0..t {
                            let out = &mut dx[(bi * t + ti) * d..(bi * t + ti + 1) * d];
                            for (o, v) in out.iter_mut().zip(gr) {
                                *o = v / t as f64;
                            }
                        }
                    }
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
            }
        }
        Ok(())
    }
}
