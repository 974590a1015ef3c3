use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::{strides, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        p: usize,
        q: usize,
        r: usize,
        /// (a matrix index, b matrix index) per output matrix.
        pairs: Vec<(usize, usize)>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    Softmax {
        a: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        a: Var,
        width: usize,
        inv_std: Vec<f64>,
    },
    Reshape(Var),
    Permute {
        a: Var,
        /// Source offset of every output element.
        source: Vec<usize>,
    },
    Concat {
        parts: Vec<Var>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Slice {
        a: Var,
        outer: usize,
        src_chunk: usize,
        offset: usize,
        chunk: usize,
    },
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
        classes: usize,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records operations in execution order; every operation's inputs were
/// recorded before it, so reverse insertion order is a valid topological
/// order for the backward sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn shape_err(what: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{what}: incompatible shapes {a:?} and {b:?}"))
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

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Pushes the result of a differentiable op on `inputs`.
    fn record(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, requires_grad, op)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Leaf whose gradient is kept after [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient left by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Batched matrix product `[.., p, q] · [.., q, r] -> [.., p, r]`;
    /// leading extents broadcast numpy-style.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let (p, q, r) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let rank = ba.len().max(bb.len());
        let mut batch = vec![1usize; rank];
        let ext = |s: &[usize], i: usize| -> usize {
            let pad = rank - s.len();
            if i < pad {
                1
            } else {
                s[i - pad]
            }
        };
        for (i, out) in batch.iter_mut().enumerate() {
            let (x, y) = (ext(ba, i), ext(bb, i));
            *out = if x == y || y == 1 {
                x
            } else if x == 1 {
                y
            } else {
                return Err(shape_err("matmul batch", &sa, &sb));
            };
        }
        let count: usize = batch.iter().product();
        let a_ext: Vec<usize> = (0..rank).map(|i| ext(ba, i)).collect();
        let b_ext: Vec<usize> = (0..rank).map(|i| ext(bb, i)).collect();
        let (a_str, b_str) = (strides(&a_ext), strides(&b_ext));
        let mut pairs = Vec::with_capacity(count);
        let mut idx = vec![0usize; rank];
        for _ in 0..count {
            let (mut ia, mut ib) = (0, 0);
            for d in 0..rank {
                if a_ext[d] != 1 {
                    ia += idx[d] * a_str[d];
                }
                if b_ext[d] != 1 {
                    ib += idx[d] * b_str[d];
                }
            }
            pairs.push((ia, ib));
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < batch[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let mut out = vec![0.0; count * p * r];
        {
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for (k, &(ia, ib)) in pairs.iter().enumerate() {
                gemm_nn(
                    &da[ia * p * q..(ia + 1) * p * q],
                    &db[ib * q * r..(ib + 1) * q * r],
                    &mut out[k * p * r..(k + 1) * p * r],
                    p,
                    q,
                    r,
                );
            }
        }
        let mut shape = batch;
        shape.extend_from_slice(&[p, r]);
        let value = Tensor::new(shape, out)?;
        Ok(self.record(
            value,
            &[a, b],
            Op::MatMul {
                a,
                b,
                p,
                q,
                r,
                pairs,
            },
        ))
    }

    /// `b` must have the same shape as `a`, a suffix of it, or one element.
    fn check_broadcast(&self, what: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = self.value(b).len() == 1
            || (sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb);
        if ok {
            Ok(())
        } else {
            Err(shape_err(what, sa, sb))
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let bd = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % bd.len()]))
            .collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape preserved")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("add", a, b)?;
        let v = self.zip_broadcast(a, b, |x, y| x + y);
        Ok(self.record(v, &[a, b], Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("sub", a, b)?;
        let v = self.zip_broadcast(a, b, |x, y| x - y);
        Ok(self.record(v, &[a, b], Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_broadcast("mul", a, b)?;
        let v = self.zip_broadcast(a, b, |x, y| x * y);
        Ok(self.record(v, &[a, b], Op::Mul(a, b)))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("shape preserved")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.map(a, |x| x * factor);
        self.record(v, &[a], Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, libm::tanh);
        self.record(v, &[a], Op::Tanh(a))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.map(a, gelu);
        self.record(v, &[a], Op::Gelu(a))
    }

    fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        (outer, shape[axis], inner)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dimension(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, len, inner) = Self::axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| src[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in 0..len {
                    let e = libm::exp(src[at(l)] - max);
                    out[at(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    out[at(l)] /= total;
                }
            }
        }
        let v = Tensor::new(shape, out)?;
        Ok(self.record(
            v,
            &[a],
            Op::Softmax {
                a,
                outer,
                len,
                inner,
            },
        ))
    }

    /// Normalises the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let width = *t.shape().last().expect("rank >= 1");
        let rows = t.len() / width;
        let mut out = vec![0.0; t.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for (row, dst) in t.data().chunks(width).zip(out.chunks_mut(width)) {
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / width as f64;
            let is = 1.0 / libm::sqrt(var + eps);
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = (x - mean) * is;
            }
            inv_std.push(is);
        }
        let v = Tensor::new(t.shape().to_vec(), out).expect("shape preserved");
        self.record(v, &[a], Op::LayerNorm { a, width, inv_std })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.record(v, &[a], Op::Reshape(a)))
    }

    /// Output axis `k` is input axis `axes[k]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes.iter().any(|&x| x >= shape.len() || core::mem::replace(&mut seen[x], true))
        {
            return Err(Error::Dimension(format!(
                "invalid permutation {axes:?} for {shape:?}"
            )));
        }
        let in_str = strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
        let src_str: Vec<usize> = axes.iter().map(|&x| in_str[x]).collect();
        let n = self.value(a).len();
        let mut source = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        let mut off = 0usize;
        for _ in 0..n {
            source.push(off);
            for d in (0..out_shape.len()).rev() {
                idx[d] += 1;
                off += src_str[d];
                if idx[d] < out_shape[d] {
                    break;
                }
                off -= src_str[d] * out_shape[d];
                idx[d] = 0;
            }
        }
        let src = self.value(a).data();
        let data = source.iter().map(|&s| src[s]).collect();
        let v = Tensor::new(out_shape, data)?;
        Ok(self.record(v, &[a], Op::Permute { a, source }))
    }

    pub fn transpose(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let rank = self.shape(a).len();
        if i >= rank || j >= rank {
            return Err(Error::Dimension(format!(
                "transpose axes ({i}, {j}) out of range for rank {rank}"
            )));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(i, j);
        self.permute(a, &axes)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Dimension(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let same = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !same {
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = Self::axis_split(&base, axis);
        let chunks: Vec<usize> = parts.iter().map(|&p| self.shape(p)[axis] * inner).collect();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &c) in parts.iter().zip(&chunks) {
                data.extend_from_slice(&self.value(p).data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::new(shape, data)?;
        Ok(self.record(
            v,
            parts,
            Op::Concat {
                parts: parts.to_vec(),
                outer,
                chunks,
            },
        ))
    }

    /// Keeps indices `start..start + len` of `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::Dimension(format!(
                "slice {start}..{} of axis {axis} out of range for {shape:?}",
                start + len
            )));
        }
        let (outer, ext, inner) = Self::axis_split(&shape, axis);
        let (src_chunk, offset, chunk) = (ext * inner, start * inner, len * inner);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * chunk);
        for o in 0..outer {
            data.extend_from_slice(&src[o * src_chunk + offset..o * src_chunk + offset + chunk]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let v = Tensor::new(out_shape, data)?;
        Ok(self.record(
            v,
            &[a],
            Op::Slice {
                a,
                outer,
                src_chunk,
                offset,
                chunk,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.record(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.record(Tensor::scalar(s), &[a], Op::Mean(a))
    }

    /// Mean softmax cross-entropy over the rows of `logits[.., C]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let classes = *t.shape().last().expect("rank >= 1");
        let rows = t.len() / classes;
        if targets.len() != rows {
            return Err(Error::Dimension(format!(
                "cross_entropy: {} targets for {rows} rows of {:?}",
                targets.len(),
                t.shape()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&c| c >= classes) {
            return Err(Error::Data(format!("target class {bad} >= {classes}")));
        }
        let mut probs = vec![0.0; t.len()];
        let mut loss = 0.0;
        for ((row, dst), &target) in t.data().chunks(classes).zip(probs.chunks_mut(classes)).zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (d, &x) in dst.iter_mut().zip(row) {
                *d = libm::exp(x - max);
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
            loss -= row[target] - max - libm::log(total);
        }
        let v = Tensor::scalar(loss / rows as f64);
        Ok(self.record(
            v,
            &[logits],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                classes,
            },
        ))
    }

    /// Mean squared error against a constant target of equal length.
    pub fn mse(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        let t = self.value(pred);
        if t.len() != target.len() {
            return Err(Error::Dimension(format!(
                "mse: prediction {:?} vs {} targets",
                t.shape(),
                target.len()
            )));
        }
        let s = t
            .data()
            .iter()
            .zip(target)
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / target.len() as f64;
        Ok(self.record(
            Tensor::scalar(s),
            &[pred],
            Op::Mse {
                pred,
                target: target.to_vec(),
            },
        ))
    }

    /// Fills the gradient of `loss` with respect to every variable that
    /// requires one. Replaces gradients from any earlier call.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.0].value.data();
        let out = nodes[idx].value.data();
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                p,
                q,
                r,
                pairs,
            } => {
                let (p, q, r) = (*p, *q, *r);
                if let Some(ga) = slot(nodes, grads, *a) {
                    let bd = val(*b);
                    for (k, &(ia, ib)) in pairs.iter().enumerate() {
                        gemm_nt(
                            &g[k * p * r..(k + 1) * p * r],
                            &bd[ib * q * r..(ib + 1) * q * r],
                            &mut ga[ia * p * q..(ia + 1) * p * q],
                            p,
                            r,
                            q,
                        );
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    let ad = val(*a);
                    for (k, &(ia, ib)) in pairs.iter().enumerate() {
                        gemm_tn(
                            &ad[ia * p * q..(ia + 1) * p * q],
                            &g[k * p * r..(k + 1) * p * r],
                            &mut gb[ib * q * r..(ib + 1) * q * r],
                            p,
                            q,
                            r,
                        );
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[idx].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    let n = gb.len();
                    for (i, &y) in g.iter().enumerate() {
                        gb[i % n] += sign * y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a), val(*b));
                let nb = bd.len();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i] * bd[i % nb];
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for (i, &y) in g.iter().enumerate() {
                        gb[i % nb] += y * ad[i];
                    }
                }
            }
            Op::Scale(a, f) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x += f * y;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((x, &y), &t) in ga.iter_mut().zip(g).zip(out) {
                        *x += y * (1.0 - t * t);
                    }
                }
            }
            Op::Gelu(a) => {
                let ad = val(*a);
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((x, &y), &z) in ga.iter_mut().zip(g).zip(ad) {
                        *x += y * gelu_grad(z);
                    }
                }
            }
            Op::Softmax {
                a,
                outer,
                len,
                inner,
            } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let (len, inner) = (*len, *inner);
                    for o in 0..*outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * len + l) * inner + i;
                            let dot: f64 = (0..len).map(|l| g[at(l)] * out[at(l)]).sum();
                            for l in 0..len {
                                ga[at(l)] += out[at(l)] * (g[at(l)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { a, width, inv_std } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let w = *width;
                    let n = w as f64;
                    for (r, &is) in inv_std.iter().enumerate() {
                        let gy = &g[r * w..(r + 1) * w];
                        let xh = &out[r * w..(r + 1) * w];
                        let mean_g = gy.iter().sum::<f64>() / n;
                        let mean_gx = gy.iter().zip(xh).map(|(u, v)| u * v).sum::<f64>() / n;
                        for j in 0..w {
                            ga[r * w + j] += is * (gy[j] - mean_g - xh[j] * mean_gx);
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
            Op::Permute { a, source } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for (&s, &y) in source.iter().zip(g) {
                        ga[s] += y;
                    }
                }
            }
            Op::Concat {
                parts,
                outer,
                chunks,
            } => {
                let row: usize = chunks.iter().sum();
                let mut start = 0;
                for (&p, &c) in parts.iter().zip(chunks) {
                    if let Some(gp) = slot(nodes, grads, p) {
                        for o in 0..*outer {
                            let src = &g[o * row + start..o * row + start + c];
                            for (x, &y) in gp[o * c..(o + 1) * c].iter_mut().zip(src) {
                                *x += y;
                            }
                        }
                    }
                    start += c;
                }
            }
            Op::Slice {
                a,
                outer,
                src_chunk,
                offset,
                chunk,
            } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for o in 0..*outer {
                        let dst = &mut ga[o * src_chunk + offset..o * src_chunk + offset + chunk];
                        for (x, &y) in dst.iter_mut().zip(&g[o * chunk..(o + 1) * chunk]) {
                            *x += y;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    for x in ga.iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    let s = g[0] / ga.len() as f64;
                    for x in ga.iter_mut() {
                        *x += s;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                classes,
            } => {
                if let Some(gl) = slot(nodes, grads, *logits) {
                    let s = g[0] / targets.len() as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..*classes {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            gl[r * classes + c] += s * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
            Op::Mse { pred, target } => {
                let pd = val(*pred);
                if let Some(gp) = slot(nodes, grads, *pred) {
                    let s = 2.0 * g[0] / target.len() as f64;
                    for ((x, &p), &y) in gp.iter_mut().zip(pd).zip(target) {
                        *x += s * (p - y);
                    }
                }
            }
        }
    }
}
