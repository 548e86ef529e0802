//! Reverse-mode tape over dense tensors.
//!
//! Every forward op appends one node holding its output value and the ids
//! of its inputs. Because inputs always exist before the op that consumes
//! them, the node list is topologically ordered by construction and the
//! backward sweep simply walks it in reverse, so each node's gradient is
//! complete before it is propagated.

use std::collections::HashMap;

use super::params::ParameterStore;
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    Lookup { table: NodeId, index: usize },
    Affine { w: NodeId, x: NodeId },
    Concat(Vec<NodeId>),
    Add(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Scale(NodeId, f64),
    StackRows(Vec<NodeId>),
    MeanRows(NodeId),
    WeightedSum { weights: NodeId, items: Vec<NodeId> },
    LeakyRelu(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    CircCorr(NodeId, NodeId),
    Reshape(NodeId),
    Conv2d { image: NodeId, filters: NodeId },
    Dot(NodeId, NodeId),
    Sum(NodeId),
    Select { x: NodeId, indices: Vec<usize> },
    Bce { scores: NodeId, targets: Vec<f64> },
    SoftmaxCrossEntropy { logits: NodeId, target: usize },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Lower bound of the probability clamp used by the BCE op.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// `ln(1 + eˣ)` without overflow or cancellation.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Scores beyond `±ln((1 − c)/c)` put `σ` outside `[c, 1 − c]`.
fn score_clamp() -> f64 {
    ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite output from {op:?}");
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    /// Records parameter `name`. Requesting the same name again returns the
    /// same node, so every use of a parameter shares one leaf.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.params.get(name) {
            return Ok(id);
        }
        let value = store.value(name)?.clone();
        let id = self.push(value, Op::Param);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Row `index` of a rank-2 table.
    pub fn lookup(&mut self, table: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(table);
        expect_rank("lookup", t, 2)?;
        if index >= t.shape()[0] {
            return Err(Error::IndexOutOfRange {
                what: "lookup table",
                index,
                len: t.shape()[0],
            });
        }
        let row = Tensor::vector(t.row(index).to_vec());
        Ok(self.push(row, Op::Lookup { table, index }))
    }

    /// `W · x` with `W: [m×n]`, `x: [n]`.
    pub fn affine(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (wv, xv) = (self.value(w), self.value(x));
        expect_rank("affine", wv, 2)?;
        expect_rank("affine", xv, 1)?;
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        if xv.len() != n {
            return Err(Error::shape(
                "affine",
                format!("matrix {:?} times vector of length {}", wv.shape(), xv.len()),
            ));
        }
        let out = tensor::matvec(wv.data(), m, n, xv.data());
        Ok(self.push(Tensor::vector(out), Op::Affine { w, x }))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut out = Vec::new();
        for &p in parts {
            let v = self.value(p);
            expect_rank("concat", v, 1)?;
            out.extend_from_slice(v.data());
        }
        Ok(self.push(Tensor::vector(out), Op::Concat(parts.to_vec())))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Sum of same-shaped inputs, accumulated left to right.
    pub fn add_n(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("add_n", "no inputs"))?;
        let mut acc = self.value(*first).clone();
        for &id in &items[1..] {
            let v = self.value(id);
            if v.shape() != acc.shape() {
                return Err(Error::shape(
                    "add_n",
                    format!("{:?} vs {:?}", acc.shape(), v.shape()),
                ));
            }
            acc.add_assign(v.data());
        }
        Ok(self.push(acc, Op::AddN(items.to_vec())))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|a| a * s).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Scale(x, s)))
    }

    /// Stacks `k` vectors of length `d` into a `[k×d]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        let first = rows
            .first()
            .ok_or_else(|| Error::shape("stack_rows", "no rows"))?;
        let d = self.value(*first).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let v = self.value(r);
            expect_rank("stack_rows", v, 1)?;
            if v.len() != d {
                return Err(Error::shape("stack_rows", "rows differ in length"));
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor::matrix(rows.len(), d, data)?;
        Ok(self.push(out, Op::StackRows(rows.to_vec())))
    }

    /// Column-wise arithmetic mean of a `[k×d]` matrix.
    pub fn mean_rows(&mut self, m: NodeId) -> Result<NodeId> {
        let v = self.value(m);
        expect_rank("mean_rows", v, 2)?;
        let (k, d) = (v.shape()[0], v.shape()[1]);
        if k == 0 {
            return Err(Error::shape("mean_rows", "zero rows"));
        }
        let mut out = vec![0.0; d];
        for r in 0..k {
            for (o, x) in out.iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        let inv = 1.0 / k as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.push(Tensor::vector(out), Op::MeanRows(m)))
    }

    /// `Σ_k weights[k] · items[k]` over same-length vectors.
    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> Result<NodeId> {
        let w = self.value(weights);
        expect_rank("weighted_sum", w, 1)?;
        if w.len() != items.len() || items.is_empty() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} items", w.len(), items.len()),
            ));
        }
        let d = self.value(items[0]).len();
        let mut out = vec![0.0; d];
        for (k, &it) in items.iter().enumerate() {
            let v = self.value(it);
            if v.len() != d {
                return Err(Error::shape("weighted_sum", "items differ in length"));
            }
            let wk = w.data()[k];
            for (o, x) in out.iter_mut().zip(v.data()) {
                *o += wk * x;
            }
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(out, op))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.map(x, |a| if a >= 0.0 { a } else { slope * a }, Op::LeakyRelu(x, slope))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.map(x, |a| if a >= 0.0 { a } else { 0.0 }, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    /// Softmax over a non-empty vector, with max subtraction.
    pub fn masked_softmax(&mut self, logits: NodeId) -> Result<NodeId> {
        let v = self.value(logits);
        expect_rank("masked_softmax", v, 1)?;
        let out = softmax(v.data())?;
        Ok(self.push(Tensor::vector(out), Op::Softmax(logits)))
    }

    pub fn circ_corr(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        expect_rank("circ_corr", av, 1)?;
        expect_rank("circ_corr", bv, 1)?;
        if av.len() != bv.len() {
            return Err(Error::shape(
                "circ_corr",
                format!("dims {} and {}", av.len(), bv.len()),
            ));
        }
        let out = tensor::circular_correlation(av.data(), bv.data());
        Ok(self.push(Tensor::vector(out), Op::CircCorr(a, b)))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().with_shape(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    pub fn reshape2d(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = self.value(x);
        expect_rank("reshape2d", v, 1)?;
        self.reshape(x, &[rows, cols])
    }

    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len();
        self.reshape(x, &[n])
    }

    /// Valid cross-correlation (no kernel flip, stride 1, no padding) of a
    /// single-channel `[H×W]` image with `[F×k×k]` filters; output `[F×oh×ow]`.
    pub fn conv2d(&mut self, image: NodeId, filters: NodeId) -> Result<NodeId> {
        let (img, flt) = (self.value(image), self.value(filters));
        expect_rank("conv2d", img, 2)?;
        expect_rank("conv2d", flt, 3)?;
        let (h, w) = (img.shape()[0], img.shape()[1]);
        let (f, kh, kw) = (flt.shape()[0], flt.shape()[1], flt.shape()[2]);
        if kh > h || kw > w || kh == 0 || kw == 0 {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}×{kw} does not fit image {h}×{w}"),
            ));
        }
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let (id, fd) = (img.data(), flt.data());
        let mut out = vec![0.0; f * oh * ow];
        for fi in 0..f {
            let kernel = &fd[fi * kh * kw..(fi + 1) * kh * kw];
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..kh {
                        let irow = &id[(y + dy) * w + x..(y + dy) * w + x + kw];
                        let krow = &kernel[dy * kw..(dy + 1) * kw];
                        for (a, b) in irow.iter().zip(krow) {
                            acc += a * b;
                        }
                    }
                    out[(fi * oh + y) * ow + x] = acc;
                }
            }
        }
        let out = Tensor::new(vec![f, oh, ow], out)?;
        Ok(self.push(out, Op::Conv2d { image, filters }))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.len() != bv.len() {
            return Err(Error::shape("dot", format!("{} vs {}", av.len(), bv.len())));
        }
        let out = Tensor::scalar(tensor::dot(av.data(), bv.data()));
        Ok(self.push(out, Op::Dot(a, b)))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x)))
    }

    /// Gathers `x[indices]` from a vector; indices may repeat.
    pub fn select(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let v = self.value(x);
        expect_rank("select", v, 1)?;
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            out.push(*v.data().get(i).ok_or(Error::IndexOutOfRange {
                what: "select",
                index: i,
                len: v.len(),
            })?);
        }
        Ok(self.push(
            Tensor::vector(out),
            Op::Select {
                x,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Summed binary cross-entropy of `sigmoid(scores)` against 0/1
    /// targets, with probabilities clamped to `[1e-12, 1 − 1e-12]`.
    pub fn bce_with_scores(&mut self, scores: NodeId, targets: &[f64]) -> Result<NodeId> {
        let v = self.value(scores);
        expect_rank("bce", v, 1)?;
        if v.len() != targets.len() {
            return Err(Error::shape(
                "bce",
                format!("{} scores for {} targets", v.len(), targets.len()),
            ));
        }
        // Clamping σ(s) to [c, 1 − c] is clamping s to ±ln((1 − c)/c);
        // −ln σ(s) = softplus(−s) and −ln(1 − σ(s)) = softplus(s) then avoid
        // the cancellation in 1 − σ(s).
        let bound = score_clamp();
        let mut loss = 0.0;
        for (&s, &y) in v.data().iter().zip(targets) {
            let s = s.clamp(-bound, bound);
            loss += y * softplus(-s) + (1.0 - y) * softplus(s);
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                scores,
                targets: targets.to_vec(),
            },
        ))
    }

    /// `−log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        let v = self.value(logits);
        expect_rank("softmax_cross_entropy", v, 1)?;
        if target >= v.len() {
            return Err(Error::IndexOutOfRange {
                what: "class logits",
                index: target,
                len: v.len(),
            });
        }
        let max = v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - v.data()[target];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, target },
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        let mut seed = Tensor::zeros(self.value(loss).shape());
        seed.fill(1.0);
        grads[loss.0] = Some(seed);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward sweep that adds every parameter leaf's gradient into `store`.
    pub fn backward_into(&self, loss: NodeId, store: &mut ParameterStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (name, &id) in &self.params {
            if let Some(g) = grads.get(id) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let gd = g.data();
        let mut acc = |target: NodeId, f: &dyn Fn(&mut [f64])| {
            let slot = &mut grads[target.0];
            let t = slot.get_or_insert_with(|| Tensor::zeros(self.nodes[target.0].value.shape()));
            f(t.data_mut());
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::Lookup { table, index } => {
                let cols = self.value(*table).shape()[1];
                let start = index * cols;
                acc(*table, &|t| {
                    for (a, b) in t[start..start + cols].iter_mut().zip(gd) {
                        *a += b;
                    }
                });
            }
            Op::Affine { w, x } => {
                let wv = self.value(*w);
                let xv = self.value(*x);
                let (m, n) = (wv.shape()[0], wv.shape()[1]);
                acc(*w, &|t| {
                    for r in 0..m {
                        let gr = gd[r];
                        if gr != 0.0 {
                            for (a, b) in t[r * n..(r + 1) * n].iter_mut().zip(xv.data()) {
                                *a += gr * b;
                            }
                        }
                    }
                });
                acc(*x, &|t| {
                    for r in 0..m {
                        let gr = gd[r];
                        if gr != 0.0 {
                            for (a, b) in t.iter_mut().zip(&wv.data()[r * n..(r + 1) * n]) {
                                *a += gr * b;
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    let slice = &gd[offset..offset + n];
                    acc(p, &|t| {
                        for (a, b) in t.iter_mut().zip(slice) {
                            *a += b;
                        }
                    });
                    offset += n;
                }
            }
            Op::Add(a, b) => {
                for &p in [a, b] {
                    acc(p, &|t| {
                        for (x, y) in t.iter_mut().zip(gd) {
                            *x += y;
                        }
                    });
                }
            }
            Op::AddN(items) => {
                for &p in items {
                    acc(p, &|t| {
                        for (x, y) in t.iter_mut().zip(gd) {
                            *x += y;
                        }
                    });
                }
            }
            Op::Scale(x, s) => acc(*x, &|t| {
                for (a, b) in t.iter_mut().zip(gd) {
                    *a += s * b;
                }
            }),
            Op::StackRows(rows) => {
                let d = gd.len() / rows.len();
                for (k, &r) in rows.iter().enumerate() {
                    let slice = &gd[k * d..(k + 1) * d];
                    acc(r, &|t| {
                        for (a, b) in t.iter_mut().zip(slice) {
                            *a += b;
                        }
                    });
                }
            }
            Op::MeanRows(m) => {
                let k = self.value(*m).shape()[0];
                let d = gd.len();
                let inv = 1.0 / k as f64;
                acc(*m, &|t| {
                    for r in 0..k {
                        for (a, b) in t[r * d..(r + 1) * d].iter_mut().zip(gd) {
                            *a += inv * b;
                        }
                    }
                });
            }
            Op::WeightedSum { weights, items } => {
                let w = self.value(*weights).data();
                let gw: Vec<f64> = items
                    .iter()
                    .map(|&it| tensor::dot(self.value(it).data(), gd))
                    .collect();
                acc(*weights, &|t| {
                    for (a, b) in t.iter_mut().zip(&gw) {
                        *a += b;
                    }
                });
                for (k, &it) in items.iter().enumerate() {
                    let wk = w[k];
                    acc(it, &|t| {
                        for (a, b) in t.iter_mut().zip(gd) {
                            *a += wk * b;
                        }
                    });
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                acc(*x, &|t| {
                    for ((a, b), &xi) in t.iter_mut().zip(gd).zip(xv) {
                        *a += if xi >= 0.0 { *b } else { slope * b };
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|t| {
                    for ((a, b), &xi) in t.iter_mut().zip(gd).zip(xv) {
                        if xi >= 0.0 {
                            *a += b;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                acc(*x, &|t| {
                    for ((a, b), &y) in t.iter_mut().zip(gd).zip(yv) {
                        *a += b * y * (1.0 - y);
                    }
                });
            }
            Op::Softmax(x) => {
                let yv = node.value.data();
                let inner = tensor::dot(gd, yv);
                acc(*x, &|t| {
                    for ((a, b), &y) in t.iter_mut().zip(gd).zip(yv) {
                        *a += y * (b - inner);
                    }
                });
            }
            Op::CircCorr(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let d = av.len();
                acc(*a, &|t| {
                    for (i, ti) in t.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for (g, y) in gd[..d - i].iter().zip(&bv[i..]) {
                            s += g * y;
                        }
                        for (g, y) in gd[d - i..].iter().zip(&bv[..i]) {
                            s += g * y;
                        }
                        *ti += s;
                    }
                });
                acc(*b, &|t| {
                    for k in 0..d {
                        let gk = gd[k];
                        let (lo, hi) = t.split_at_mut(k);
                        for (ti, x) in hi.iter_mut().zip(&av[..d - k]) {
                            *ti += gk * x;
                        }
                        for (ti, x) in lo.iter_mut().zip(&av[d - k..]) {
                            *ti += gk * x;
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &|t| {
                for (a, b) in t.iter_mut().zip(gd) {
                    *a += b;
                }
            }),
            Op::Conv2d { image, filters } => {
                let img = self.value(*image);
                let flt = self.value(*filters);
                let w = img.shape()[1];
                let (f, kh, kw) = (flt.shape()[0], flt.shape()[1], flt.shape()[2]);
                let (oh, ow) = (node.value.shape()[1], node.value.shape()[2]);
                let (id_, fd) = (img.data(), flt.data());
                acc(*filters, &|t| {
                    for fi in 0..f {
                        for y in 0..oh {
                            for x in 0..ow {
                                let go = gd[(fi * oh + y) * ow + x];
                                if go == 0.0 {
                                    continue;
                                }
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        t[(fi * kh + dy) * kw + dx] += go * id_[(y + dy) * w + x + dx];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*image, &|t| {
                    for fi in 0..f {
                        for y in 0..oh {
                            for x in 0..ow {
                                let go = gd[(fi * oh + y) * ow + x];
                                if go == 0.0 {
                                    continue;
                                }
                                for dy in 0..kh {
                                    for dx in 0..kw {
                                        t[(y + dy) * w + x + dx] += go * fd[(fi * kh + dy) * kw + dx];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Dot(a, b) => {
                let g0 = gd[0];
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|t| {
                    for (x, y) in t.iter_mut().zip(bv) {
                        *x += g0 * y;
                    }
                });
                acc(*b, &|t| {
                    for (x, y) in t.iter_mut().zip(av) {
                        *x += g0 * y;
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = gd[0];
                acc(*x, &|t| t.iter_mut().for_each(|a| *a += g0));
            }
            Op::Select { x, indices } => acc(*x, &|t| {
                for (&i, b) in indices.iter().zip(gd) {
                    t[i] += b;
                }
            }),
            Op::Bce { scores, targets } => {
                let g0 = gd[0];
                let sv = self.value(*scores).data();
                let bound = score_clamp();
                acc(*scores, &|t| {
                    for ((a, &s), &y) in t.iter_mut().zip(sv).zip(targets) {
                        // Clamped scores contribute no gradient.
                        if s.abs() < bound {
                            *a += g0 * (sigmoid(s) - y);
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let g0 = gd[0];
                let lv = self.value(*logits).data();
                let p = softmax(lv).expect("non-empty logits");
                acc(*logits, &|t| {
                    for (i, (a, pi)) in t.iter_mut().zip(&p).enumerate() {
                        let y = if i == *target { 1.0 } else { 0.0 };
                        *a += g0 * (pi - y);
                    }
                });
            }
        }
    }
}

/// Max-subtracted softmax of a non-empty slice.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::shape("masked_softmax", "empty logits"));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_of(t: &Tape, id: NodeId) -> Vec<f64> {
        t.value(id).data().to_vec()
    }

    #[test]
    fn lookup_identity_row_and_scatter() {
        let mut t = Tape::new();
        let table = t.constant(Tensor::identity(2));
        let row = t.lookup(table, 1).unwrap();
        assert_eq!(vec_of(&t, row), vec![0.0, 1.0]);
        let w = t.constant(Tensor::vector(vec![3.0, 5.0]));
        let loss = t.dot(row, w).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(table).unwrap().data(), &[0.0, 0.0, 3.0, 5.0]);
        assert!(t.lookup(table, 2).is_err());
    }

    #[test]
    fn repeated_lookup_accumulates() {
        let mut t = Tape::new();
        let table = t.constant(Tensor::identity(2));
        let a = t.lookup(table, 1).unwrap();
        let b = t.lookup(table, 1).unwrap();
        let ga = t.constant(Tensor::vector(vec![1.0, 2.0]));
        let gb = t.constant(Tensor::vector(vec![10.0, 20.0]));
        let la = t.dot(a, ga).unwrap();
        let lb = t.dot(b, gb).unwrap();
        let loss = t.add(la, lb).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(table).unwrap().data(), &[0.0, 0.0, 11.0, 22.0]);
    }

    #[test]
    fn affine_concat_mean() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::identity(3));
        let x = t.constant(Tensor::vector(vec![1.0, -2.0, 4.0]));
        let y = t.affine(w, x).unwrap();
        assert_eq!(vec_of(&t, y), vec![1.0, -2.0, 4.0]);

        let a = t.constant(Tensor::vector(vec![1.0]));
        let b = t.constant(Tensor::vector(vec![2.0, 3.0]));
        let c = t.concat(&[a, b]).unwrap();
        assert_eq!(vec_of(&t, c), vec![1.0, 2.0, 3.0]);

        let m = t.constant(Tensor::from_rows(&[vec![0.0, 2.0], vec![4.0, 6.0]]).unwrap());
        let mean = t.mean_rows(m).unwrap();
        assert_eq!(vec_of(&t, mean), vec![2.0, 4.0]);

        let bad = t.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(t.affine(w, bad).is_err());
    }

    #[test]
    fn activations() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = t.relu(x).unwrap();
        assert_eq!(vec_of(&t, r), vec![0.0, 0.0, 2.0]);
        let n = t.constant(Tensor::vector(vec![-1.0]));
        let l = t.leaky_relu(n, 0.2).unwrap();
        assert_eq!(vec_of(&t, l), vec![-0.2]);
        let z = t.constant(Tensor::scalar(0.0));
        let s = t.sigmoid(z).unwrap();
        assert_eq!(t.value(s).item().unwrap(), 0.5);
    }

    #[test]
    fn relu_kink_uses_positive_side() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0]));
        let y = t.relu(x).unwrap();
        let l = t.sum(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);

        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![0.0]));
        let y = t.leaky_relu(x, 0.2).unwrap();
        let l = t.sum(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn softmax_cases() {
        let mut t = Tape::new();
        let one = t.constant(Tensor::vector(vec![-37.5]));
        let s = t.masked_softmax(one).unwrap();
        assert_eq!(vec_of(&t, s), vec![1.0]);
        let two = t.constant(Tensor::vector(vec![3.0, 3.0]));
        let s = t.masked_softmax(two).unwrap();
        assert_eq!(vec_of(&t, s), vec![0.5, 0.5]);
        let l = t.constant(Tensor::vector(vec![std::f64::consts::LN_2, 0.0]));
        let s = t.masked_softmax(l).unwrap();
        let v = vec_of(&t, s);
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-15 && (v[1] - 1.0 / 3.0).abs() < 1e-15);
        let empty = t.constant(Tensor::vector(vec![]));
        assert!(t.masked_softmax(empty).is_err());
    }

    #[test]
    fn conv_cases() {
        let mut t = Tape::new();
        let img = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let k = t.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = t.conv2d(img, k).unwrap();
        assert_eq!(t.value(y).shape(), &[1, 1, 1]);
        assert_eq!(vec_of(&t, y), vec![5.0]);

        let unit = t.constant(Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap());
        let y = t.conv2d(img, unit).unwrap();
        assert_eq!(vec_of(&t, y), vec![1.0, 2.0, 3.0, 4.0]);

        let big = t.constant(Tensor::zeros(&[1, 3, 3]));
        assert!(t.conv2d(img, big).is_err());
    }

    #[test]
    fn reshape_flatten_roundtrip() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let m = t.reshape2d(x, 2, 3).unwrap();
        assert_eq!(t.value(m).shape(), &[2, 3]);
        let f = t.flatten(m).unwrap();
        assert_eq!(t.value(f), t.value(x));
        assert!(t.reshape2d(x, 4, 2).is_err());
    }

    #[test]
    fn sigmoid_chain_rule() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::vector(vec![0.0]));
        let x = t.constant(Tensor::vector(vec![1.0]));
        let z = t.dot(w, x).unwrap();
        let y = t.sigmoid(z).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[0.25]);
    }

    #[test]
    fn circ_corr_gradient_with_basis_vector() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]));
        let b = t.constant(Tensor::vector(vec![0.3, -1.2, 2.0, 0.5]));
        let c = t.circ_corr(a, b).unwrap();
        assert_eq!(t.value(c), t.value(b));
        let l = t.sum(c).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(t.backward(x).is_err());
    }

    #[test]
    fn unreachable_nodes_get_no_gradient() {
        let mut t = Tape::new();
        let p = t.constant(Tensor::vector(vec![1.0]));
        let q = t.constant(Tensor::vector(vec![2.0]));
        let l = t.sum(q).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.get(p).is_none());
    }

    #[test]
    fn bce_at_zero_scores() {
        let mut t = Tape::new();
        let s = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let l = t.bce_with_scores(s, &[1.0, 0.0]).unwrap();
        let v = t.value(l).item().unwrap();
        assert!((v - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }
}
