//! Reverse-mode tape.
//!
//! A [`Graph`] records every value produced during a forward pass together with
//! the operation that produced it. [`Graph::backward`] walks the tape in reverse
//! and accumulates gradients into each operand. Operands always precede the
//! nodes that consume them, so a single reverse sweep is a valid topological
//! order.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NumericsError, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Parameter,
    Input,
    Intermediate,
}

/// Train mode enables stochastic regularization; eval mode is deterministic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Eval,
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    AddLeading { a: NodeId, b: NodeId },
    AddMiddle { a: NodeId, b: NodeId, repeat: usize },
    MulConst { x: NodeId, mask: Tensor },
    Scale { x: NodeId, factor: f64 },
    Gelu(NodeId),
    Softmax { x: NodeId, outer: usize, len: usize, inner: usize },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, normed: Tensor, rstd: Vec<f64> },
    Attention { q: NodeId, k: NodeId, v: NodeId, batch: usize, seq: usize, heads: usize, probs: Vec<f64> },
    QueryAttention { q: NodeId, k: NodeId, v: NodeId, positions: usize, vars: usize, scale: f64, weights: Vec<f64> },
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    Reshape(NodeId),
    Gather { x: NodeId, indices: Vec<usize> },
    VarLinear { x: NodeId, w: NodeId, b: NodeId },
    LatMse { pred: NodeId, target: Tensor, weights: Vec<f64> },
    WeightedSum { x: NodeId, coeffs: Tensor },
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    role: Role,
    slot: Option<usize>,
}

/// The recorded computation. Parameters may be borrowed for the lifetime `'p`
/// so building a graph never copies model weights.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    mode: Mode,
    rng: ChaCha8Rng,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    slots: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Gradients for parameter slots `0..count`. Slots unreachable from the
    /// loss get zeros shaped like `shapes[slot]`.
    pub fn into_slots(mut self, shapes: &[&[usize]]) -> Vec<Tensor> {
        let mut out: Vec<Option<Tensor>> = vec![None; shapes.len()];
        for &(node, slot) in &self.slots {
            if let Some(g) = self.grads[node].take() {
                match &mut out[slot] {
                    Some(acc) => acc.add_assign(&g),
                    empty => *empty = Some(g),
                }
            }
        }
        out.into_iter().zip(shapes).map(|(g, shape)| g.unwrap_or_else(|| Tensor::zeros(shape))).collect()
    }
}

fn mismatch(op: &'static str, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch { op, detail }
}

fn gemm(alpha: f64, a: &ArrayView2<f64>, b: &ArrayView2<f64>, beta: f64, c: &mut ArrayViewMut2<f64>) {
    general_mat_mul(alpha, a, b, beta, c);
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact (erf-based) GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

fn gelu_grad_scalar(x: f64) -> f64 {
    std_normal_cdf(x) + x * std_normal_pdf(x)
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new(Mode::Eval, 0)
    }
}

impl<'p> Graph<'p> {
    pub fn new(mode: Mode, seed: u64) -> Self {
        Self { nodes: Vec::new(), mode, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0].value.get()
    }

    pub fn role(&self, id: NodeId) -> Role {
        self.nodes[id.0].role
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value: Value::Owned(value), op, role: Role::Intermediate, slot: None });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value: Value::Owned(value), op: Op::Leaf, role: Role::Input, slot: None });
        NodeId(self.nodes.len() - 1)
    }

    /// An owned trainable leaf (used by tests and gradient checks).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value: Value::Owned(value), op: Op::Leaf, role: Role::Parameter, slot: None });
        NodeId(self.nodes.len() - 1)
    }

    /// A borrowed parameter whose gradient is reported under `slot`.
    pub fn param(&mut self, value: &'p Tensor, slot: usize) -> NodeId {
        self.nodes.push(Node { value: Value::Borrowed(value), op: Op::Leaf, role: Role::Parameter, slot: Some(slot) });
        NodeId(self.nodes.len() - 1)
    }

    /// `y = x W + b` over the trailing axis of `x`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId, NumericsError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.last_dim() != wv.shape()[0] {
            return Err(mismatch("linear", format!("x {:?} with W {:?}", xv.shape(), wv.shape())));
        }
        let out_dim = wv.shape()[1];
        if let Some(b) = b {
            if self.value(b).shape() != [out_dim] {
                return Err(mismatch("linear", format!("bias {:?} for width {out_dim}", self.value(b).shape())));
            }
        }
        let mut shape = xv.shape().to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        *shape.last_mut().unwrap() = out_dim;
        let mut y = Tensor::zeros(&shape);
        gemm(1.0, &xv.matrix(), &wv.matrix(), 0.0, &mut y.matrix_mut());
        if let Some(b) = b {
            let bias = self.value(b).data().to_vec();
            for row in y.data_mut().chunks_mut(out_dim) {
                for (o, bb) in row.iter_mut().zip(&bias) {
                    *o += bb;
                }
            }
        }
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_vec(av.shape(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds `b` to every consecutive `b.len()`-sized block of `a`.
    pub fn add_broadcast_leading(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let n = bv.len();
        if n == 0 || av.len() % n != 0 || !av.shape().ends_with(bv.shape()) {
            return Err(mismatch("add_broadcast_leading", format!("{:?} + {:?}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        for block in out.data_mut().chunks_mut(n) {
            for (o, x) in block.iter_mut().zip(bv.data()) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::AddLeading { a, b }))
    }

    /// `a` viewed as `[outer, repeat, inner]`, `b` as `[outer, inner]`; each row
    /// of `b` is added to the `repeat` rows of its outer block.
    pub fn add_broadcast_middle(&mut self, a: NodeId, b: NodeId, repeat: usize) -> Result<NodeId, NumericsError> {
        let (av, bv) = (self.value(a), self.value(b));
        let inner = bv.last_dim();
        if repeat == 0 || inner == 0 || av.len() != bv.len() * repeat || av.last_dim() != inner {
            return Err(mismatch("add_broadcast_middle", format!("{:?} + {:?} x{repeat}", av.shape(), bv.shape())));
        }
        let mut out = av.clone();
        for (block, brow) in out.data_mut().chunks_mut(repeat * inner).zip(bv.data().chunks(inner)) {
            for row in block.chunks_mut(inner) {
                for (o, x) in row.iter_mut().zip(brow) {
                    *o += x;
                }
            }
        }
        Ok(self.push(out, Op::AddMiddle { a, b, repeat }))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, x: NodeId, mask: Tensor) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        if xv.shape() != mask.shape() {
            return Err(mismatch("mul_const", format!("{:?} * {:?}", xv.shape(), mask.shape())));
        }
        let data = xv.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
        let out = Tensor::from_vec(xv.shape(), data)?;
        Ok(self.push(out, Op::MulConst { x, mask }))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let mut out = self.value(x).clone();
        out.scale(factor);
        self.push(out, Op::Scale { x, factor })
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| gelu_scalar(v)).collect();
        let out = Tensor::from_vec(xv.shape(), data).expect("same shape");
        self.push(out, Op::Gelu(x))
    }

    /// Max-stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() {
            return Err(mismatch("softmax", format!("axis {axis} for shape {shape:?}")));
        }
        if !xv.is_finite() {
            return Err(NumericsError::NonFiniteInput { op: "softmax" });
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = xv.clone();
        let data = out.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (data[idx(j)] - max).exp();
                    data[idx(j)] = e;
                    sum += e;
                }
                for j in 0..len {
                    data[idx(j)] /= sum;
                }
            }
        }
        Ok(self.push(out, Op::Softmax { x, outer, len, inner }))
    }

    /// Layer normalization over the trailing axis followed by an affine map.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        let n = xv.last_dim();
        if n == 0 || self.value(gain).shape() != [n] || self.value(bias).shape() != [n] {
            return Err(mismatch(
                "layer_norm",
                format!("x {:?}, gain {:?}, bias {:?}", xv.shape(), self.value(gain).shape(), self.value(bias).shape()),
            ));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normed = xv.clone();
        let mut out = xv.clone();
        let mut rstd = Vec::with_capacity(xv.len() / n);
        for (nrow, orow) in normed.data_mut().chunks_mut(n).zip(out.data_mut().chunks_mut(n)) {
            let mean = nrow.iter().sum::<f64>() / n as f64;
            let var = nrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd.push(r);
            for j in 0..n {
                nrow[j] = (nrow[j] - mean) * r;
                orow[j] = nrow[j] * g[j] + b[j];
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, normed, rstd }))
    }

    /// Scaled dot-product attention core. `q`, `k`, `v` are `[batch * seq, d]`
    /// with `d` split into `heads` contiguous column groups; every batch entry
    /// attends only within its own `seq` rows. Scale is `1/sqrt(d / heads)`.
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<NodeId, NumericsError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.last_dim();
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::HeadDivisibility { dim: d, heads });
        }
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.len() != batch * seq * d {
            return Err(mismatch(
                "attention",
                format!("q {:?} k {:?} v {:?} for batch {batch} seq {seq}", qv.shape(), kv.shape(), vv.shape()),
            ));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qm, km, vm) = (qv.matrix(), kv.matrix(), vv.matrix());
        let mut out = Tensor::zeros(qv.shape());
        let mut probs = vec![0.0; batch * heads * seq * seq];
        {
            let mut om = out.matrix_mut();
            for b in 0..batch {
                let rows = b * seq..(b + 1) * seq;
                for h in 0..heads {
                    let cols = h * dh..(h + 1) * dh;
                    let off = (b * heads + h) * seq * seq;
                    let p = &mut probs[off..off + seq * seq];
                    let mut pm = ArrayViewMut2::from_shape((seq, seq), p).expect("square");
                    let qh = qm.slice(s![rows.clone(), cols.clone()]);
                    let kh = km.slice(s![rows.clone(), cols.clone()]);
                    gemm(scale, &qh, &kh.t(), 0.0, &mut pm);
                    for mut row in pm.rows_mut() {
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        let mut sum = 0.0;
                        row.mapv_inplace(|x| {
                            let e = (x - max).exp();
                            sum += e;
                            e
                        });
                        row.mapv_inplace(|x| x / sum);
                    }
                    let vh = vm.slice(s![rows.clone(), cols.clone()]);
                    let mut oh = om.slice_mut(s![rows.clone(), cols]);
                    gemm(1.0, &pm.view(), &vh, 0.0, &mut oh);
                }
            }
        }
        Ok(self.push(out, Op::Attention { q, k, v, batch, seq, heads, probs }))
    }

    /// Single-query cross-attention applied independently at each of
    /// `positions` locations: `k` and `v` are `[positions, vars, d]`, `q` is
    /// `[d]`, and the output `[positions, d]` is the softmax(q.K^T * scale)
    /// weighted sum of the value rows at that location.
    pub fn query_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        positions: usize,
        vars: usize,
        scale: f64,
    ) -> Result<NodeId, NumericsError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.len();
        if qv.shape() != [d] || kv.shape() != vv.shape() || kv.len() != positions * vars * d || vars == 0 {
            return Err(mismatch(
                "query_attention",
                format!("q {:?} k {:?} v {:?} for {positions}x{vars}", qv.shape(), kv.shape(), vv.shape()),
            ));
        }
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut weights = vec![0.0; positions * vars];
        let mut out = Tensor::zeros(&[positions, d]);
        let od = out.data_mut();
        for p in 0..positions {
            let w = &mut weights[p * vars..(p + 1) * vars];
            for (j, wj) in w.iter_mut().enumerate() {
                let krow = &kd[(p * vars + j) * d..(p * vars + j + 1) * d];
                *wj = scale * krow.iter().zip(qd).map(|(a, b)| a * b).sum::<f64>();
            }
            let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for wj in w.iter_mut() {
                *wj = (*wj - max).exp();
                sum += *wj;
            }
            let orow = &mut od[p * d..(p + 1) * d];
            for (j, wj) in w.iter_mut().enumerate() {
                *wj /= sum;
                let vrow = &vd[(p * vars + j) * d..(p * vars + j + 1) * d];
                for (o, x) in orow.iter_mut().zip(vrow) {
                    *o += *wj * x;
                }
            }
        }
        Ok(self.push(out, Op::QueryAttention { q, k, v, positions, vars, scale, weights }))
    }

    /// Attention weights cached by a [`Graph::query_attention`] node, `[positions, vars]`.
    pub fn query_attention_weights(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::QueryAttention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Columns `start..end` of the trailing axis.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        let cols = xv.last_dim();
        if start >= end || end > cols {
            return Err(mismatch("slice_cols", format!("{start}..{end} of width {cols}")));
        }
        let width = end - start;
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = width;
        let data = xv.data().chunks(cols).flat_map(|row| row[start..end].iter().copied()).collect();
        let out = Tensor::from_vec(&shape, data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// Concatenation along the trailing axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        let first = parts.first().ok_or_else(|| mismatch("concat_cols", "no inputs".into()))?;
        let lead = self.value(*first).shape()[..self.value(*first).shape().len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut total = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.shape()[..pv.shape().len() - 1] != lead[..] {
                return Err(mismatch("concat_cols", format!("{:?} vs leading {lead:?}", pv.shape())));
            }
            total += pv.last_dim();
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                let w = pv.last_dim();
                data.extend_from_slice(&pv.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::from_vec(&shape, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, NumericsError> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// `out[i] = x[indices[i]]`, reshaped to `shape`. Indices may repeat.
    pub fn gather(&mut self, x: NodeId, indices: Vec<usize>, shape: &[usize]) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        if indices.len() != shape.iter().product::<usize>() || indices.iter().any(|&i| i >= xv.len()) {
            return Err(mismatch("gather", format!("{} indices into {:?} as {shape:?}", indices.len(), xv.shape())));
        }
        let data = indices.iter().map(|&i| xv.data()[i]).collect();
        let out = Tensor::from_vec(shape, data)?;
        Ok(self.push(out, Op::Gather { x, indices }))
    }

    /// Per-variable linear map: `x [N, V, in]`, `w [V, in, out]`, `b [V, out]`.
    pub fn var_linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let ok = xv.shape().len() == 3
            && wv.shape().len() == 3
            && wv.shape()[0] == xv.shape()[1]
            && wv.shape()[1] == xv.shape()[2]
            && bv.shape() == [wv.shape()[0], wv.shape()[2]];
        if !ok {
            return Err(mismatch("var_linear", format!("x {:?} w {:?} b {:?}", xv.shape(), wv.shape(), bv.shape())));
        }
        let (n, vars, input) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let output = wv.shape()[2];
        let mut out = Tensor::zeros(&[n, vars, output]);
        {
            let xm = ArrayView2::from_shape((n * vars, input), xv.data()).expect("shape");
            let wd = wv.data();
            let mut om = ArrayViewMut2::from_shape((n * vars, output), out.data_mut()).expect("shape");
            for var in 0..vars {
                let wm = ArrayView2::from_shape((input, output), &wd[var * input * output..(var + 1) * input * output])
                    .expect("shape");
                let xs = xm.slice(s![var..;vars, ..]);
                let mut os = om.slice_mut(s![var..;vars, ..]);
                gemm(1.0, &xs, &wm, 0.0, &mut os);
                let brow = &bv.data()[var * output..(var + 1) * output];
                for mut row in os.rows_mut() {
                    for (o, bb) in row.iter_mut().zip(brow) {
                        *o += bb;
                    }
                }
            }
        }
        Ok(self.push(out, Op::VarLinear { x, w, b }))
    }

    /// Latitude-weighted squared error over a `[C, H, W]` field:
    /// `sum_{c,h,w} L(h) (pred - target)^2 / (C H W)`.
    pub fn lat_mse(&mut self, pred: NodeId, target: Tensor, weights: Vec<f64>) -> Result<NodeId, NumericsError> {
        let pv = self.value(pred);
        let shape = pv.shape();
        if shape.len() != 3 || target.shape() != shape || weights.len() != shape[1] {
            return Err(mismatch(
                "lat_mse",
                format!("pred {:?}, target {:?}, {} weights", shape, target.shape(), weights.len()),
            ));
        }
        let (h, w) = (shape[1], shape[2]);
        let mut sum = 0.0;
        for (i, (p, t)) in pv.data().iter().zip(target.data()).enumerate() {
            let row = (i / w) % h;
            sum += weights[row] * (p - t) * (p - t);
        }
        let loss = sum / pv.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::LatMse { pred, target, weights }))
    }

    /// `sum_i coeffs[i] * x[i]`, a scalar.
    pub fn weighted_sum(&mut self, x: NodeId, coeffs: Tensor) -> Result<NodeId, NumericsError> {
        let xv = self.value(x);
        if xv.len() != coeffs.len() {
            return Err(mismatch("weighted_sum", format!("{:?} . {:?}", xv.shape(), coeffs.shape())));
        }
        let s = xv.data().iter().zip(coeffs.data()).map(|(a, c)| a * c).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, coeffs }))
    }

    /// Inverted dropout: identity in eval mode; in train mode each element is
    /// kept with probability `1 - rate` and scaled by `1 / (1 - rate)`.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId, NumericsError> {
        check_rate(rate)?;
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let shape = self.value(x).shape().to_vec();
        let len = self.value(x).len();
        let mask: Vec<f64> = (0..len).map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        self.mul_const(x, Tensor::from_vec(&shape, mask)?)
    }

    /// Stochastic depth on a residual branch: the whole branch of this sample
    /// is zeroed with probability `rate`, otherwise scaled by `1 / (1 - rate)`.
    pub fn drop_path(&mut self, x: NodeId, rate: f64) -> Result<NodeId, NumericsError> {
        check_rate(rate)?;
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let factor = if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 };
        let shape = self.value(x).shape().to_vec();
        self.mul_const(x, Tensor::filled(&shape, factor))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, NumericsError> {
        if self.value(loss).len() != 1 {
            return Err(NumericsError::NotScalar { shape: self.value(loss).shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            self.backprop(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let slots = self.nodes.iter().enumerate().filter_map(|(i, n)| n.slot.map(|s| (i, s))).collect();
        Ok(Gradients { grads, slots })
    }

    fn backprop(&self, idx: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = node.value.get();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let dym = dy.matrix();
                let mut dx = Tensor::zeros(xv.shape());
                gemm(1.0, &dym, &wv.matrix().t(), 0.0, &mut dx.matrix_mut());
                accumulate(grads, *x, dx);
                let mut dw = Tensor::zeros(wv.shape());
                gemm(1.0, &xv.matrix().t(), &dym, 0.0, &mut dw.matrix_mut());
                accumulate(grads, *w, dw);
                if let Some(b) = b {
                    let db = dym.sum_axis(Axis(0));
                    accumulate(grads, *b, Tensor::from_vec(&[db.len()], db.to_vec()).expect("bias"));
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, dy.clone());
                accumulate(grads, *b, dy.clone());
            }
            Op::AddLeading { a, b } => {
                accumulate(grads, *a, dy.clone());
                let bshape = self.value(*b).shape();
                let mut db = Tensor::zeros(bshape);
                let n = db.len();
                for block in dy.data().chunks(n) {
                    for (o, g) in db.data_mut().iter_mut().zip(block) {
                        *o += g;
                    }
                }
                accumulate(grads, *b, db);
            }
            Op::AddMiddle { a, b, repeat } => {
                accumulate(grads, *a, dy.clone());
                let bshape = self.value(*b).shape();
                let mut db = Tensor::zeros(bshape);
                let inner = db.last_dim();
                for (block, drow) in dy.data().chunks(repeat * inner).zip(db.data_mut().chunks_mut(inner)) {
                    for row in block.chunks(inner) {
                        for (o, g) in drow.iter_mut().zip(row) {
                            *o += g;
                        }
                    }
                }
                accumulate(grads, *b, db);
            }
            Op::MulConst { x, mask } => {
                let data = dy.data().iter().zip(mask.data()).map(|(g, m)| g * m).collect();
                accumulate(grads, *x, Tensor::from_vec(dy.shape(), data).expect("shape"));
            }
            Op::Scale { x, factor } => {
                let mut dx = dy.clone();
                dx.scale(*factor);
                accumulate(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let data = dy.data().iter().zip(xv.data()).map(|(g, &v)| g * gelu_grad_scalar(v)).collect();
                accumulate(grads, *x, Tensor::from_vec(dy.shape(), data).expect("shape"));
            }
            Op::Softmax { x, outer, len, inner } => {
                let (yd, gd) = (y.data(), dy.data());
                let mut dx = Tensor::zeros(y.shape());
                let dd = dx.data_mut();
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..*len).map(|j| yd[idx(j)] * gd[idx(j)]).sum();
                        for j in 0..*len {
                            dd[idx(j)] = yd[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::LayerNorm { x, gain, bias, normed, rstd } => {
                let n = normed.last_dim();
                let g = self.value(*gain).data();
                let mut dx = Tensor::zeros(normed.shape());
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                let mut dxhat = vec![0.0; n];
                for ((xrow, grow), (dxrow, r)) in
                    normed.data().chunks(n).zip(dy.data().chunks(n)).zip(dx.data_mut().chunks_mut(n).zip(rstd))
                {
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..n {
                        dg[j] += grow[j] * xrow[j];
                        db[j] += grow[j];
                        dxhat[j] = grow[j] * g[j];
                        mean_d += dxhat[j];
                        mean_dx += dxhat[j] * xrow[j];
                    }
                    mean_d /= n as f64;
                    mean_dx /= n as f64;
                    for j in 0..n {
                        dxrow[j] = r * (dxhat[j] - mean_d - xrow[j] * mean_dx);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gain, Tensor::from_vec(&[n], dg).expect("gain"));
                accumulate(grads, *bias, Tensor::from_vec(&[n], db).expect("bias"));
            }
            Op::Attention { q, k, v, batch, seq, heads, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qv.last_dim();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qm, km, vm, dym) = (qv.matrix(), kv.matrix(), vv.matrix(), dy.matrix());
                let mut dq = Tensor::zeros(qv.shape());
                let mut dk = Tensor::zeros(kv.shape());
                let mut dv = Tensor::zeros(vv.shape());
                let mut dp = vec![0.0; seq * seq];
                {
                    let (mut dqm, mut dkm, mut dvm) = (dq.matrix_mut(), dk.matrix_mut(), dv.matrix_mut());
                    for b in 0..*batch {
                        let rows = b * seq..(b + 1) * seq;
                        for h in 0..*heads {
                            let cols = h * dh..(h + 1) * dh;
                            let off = (b * heads + h) * seq * seq;
                            let pm = ArrayView2::from_shape((*seq, *seq), &probs[off..off + seq * seq]).expect("sq");
                            let doh = dym.slice(s![rows.clone(), cols.clone()]);
                            let vh = vm.slice(s![rows.clone(), cols.clone()]);
                            let mut dpm = ArrayViewMut2::from_shape((*seq, *seq), &mut dp[..]).expect("sq");
                            gemm(1.0, &doh, &vh.t(), 0.0, &mut dpm);
                            gemm(1.0, &pm.t(), &doh, 1.0, &mut dvm.slice_mut(s![rows.clone(), cols.clone()]));
                            for (mut drow, prow) in dpm.rows_mut().into_iter().zip(pm.rows()) {
                                let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                                drow.zip_mut_with(&prow, |g, &p| *g = p * (*g - dot));
                            }
                            let qh = qm.slice(s![rows.clone(), cols.clone()]);
                            let kh = km.slice(s![rows.clone(), cols.clone()]);
                            gemm(scale, &dpm.view(), &kh, 1.0, &mut dqm.slice_mut(s![rows.clone(), cols.clone()]));
                            gemm(scale, &dpm.t(), &qh, 1.0, &mut dkm.slice_mut(s![rows.clone(), cols]));
                        }
                    }
                }
                accumulate(grads, *q, dq);
                accumulate(grads, *k, dk);
                accumulate(grads, *v, dv);
            }
            Op::QueryAttention { q, k, v, positions, vars, scale, weights } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let d = qv.len();
                let (qd, kd, vd, gd) = (qv.data(), kv.data(), vv.data(), dy.data());
                let mut dq = vec![0.0; d];
                let mut dk = Tensor::zeros(kv.shape());
                let mut dv = Tensor::zeros(vv.shape());
                let mut da = vec![0.0; *vars];
                for p in 0..*positions {
                    let w = &weights[p * vars..(p + 1) * vars];
                    let grow = &gd[p * d..(p + 1) * d];
                    for j in 0..*vars {
                        let r = (p * vars + j) * d;
                        da[j] = vd[r..r + d].iter().zip(grow).map(|(a, b)| a * b).sum();
                        for (o, g) in dv.data_mut()[r..r + d].iter_mut().zip(grow) {
                            *o += w[j] * g;
                        }
                    }
                    let dot: f64 = w.iter().zip(&da).map(|(a, b)| a * b).sum();
                    for j in 0..*vars {
                        let ds = w[j] * (da[j] - dot) * scale;
                        let r = (p * vars + j) * d;
                        for (o, kk) in dq.iter_mut().zip(&kd[r..r + d]) {
                            *o += ds * kk;
                        }
                        for (o, qq) in dk.data_mut()[r..r + d].iter_mut().zip(qd) {
                            *o += ds * qq;
                        }
                    }
                }
                accumulate(grads, *q, Tensor::from_vec(&[d], dq).expect("query"));
                accumulate(grads, *k, dk);
                accumulate(grads, *v, dv);
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let cols = xv.last_dim();
                let width = dy.last_dim();
                let mut dx = Tensor::zeros(xv.shape());
                for (drow, grow) in dx.data_mut().chunks_mut(cols).zip(dy.data().chunks(width)) {
                    drow[*start..start + width].copy_from_slice(grow);
                }
                accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = dy.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.last_dim();
                    let data =
                        dy.data().chunks(total).flat_map(|row| row[offset..offset + w].iter().copied()).collect();
                    accumulate(grads, p, Tensor::from_vec(pv.shape(), data).expect("part"));
                    offset += w;
                }
            }
            Op::Reshape(x) => {
                let dx = dy.clone().reshaped(self.value(*x).shape()).expect("reshape");
                accumulate(grads, *x, dx);
            }
            Op::Gather { x, indices } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let dd = dx.data_mut();
                for (&i, g) in indices.iter().zip(dy.data()) {
                    dd[i] += g;
                }
                accumulate(grads, *x, dx);
            }
            Op::VarLinear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, vars, input) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let output = wv.shape()[2];
                let xm = ArrayView2::from_shape((n * vars, input), xv.data()).expect("shape");
                let gm = ArrayView2::from_shape((n * vars, output), dy.data()).expect("shape");
                let mut dx = Tensor::zeros(xv.shape());
                let mut dw = Tensor::zeros(wv.shape());
                let mut db = Tensor::zeros(self.value(*b).shape());
                {
                    let mut dxm = ArrayViewMut2::from_shape((n * vars, input), dx.data_mut()).expect("shape");
                    let dwd = dw.data_mut();
                    for var in 0..vars {
                        let span = var * input * output..(var + 1) * input * output;
                        let wm = ArrayView2::from_shape((input, output), &wv.data()[span.clone()]).expect("shape");
                        let xs = xm.slice(s![var..;vars, ..]);
                        let gs = gm.slice(s![var..;vars, ..]);
                        gemm(1.0, &gs, &wm.t(), 0.0, &mut dxm.slice_mut(s![var..;vars, ..]));
                        let mut dwm = ArrayViewMut2::from_shape((input, output), &mut dwd[span]).expect("shape");
                        gemm(1.0, &xs.t(), &gs, 0.0, &mut dwm);
                        let colsum = gs.sum_axis(Axis(0));
                        db.data_mut()[var * output..(var + 1) * output].copy_from_slice(colsum.as_slice().unwrap());
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                accumulate(grads, *b, db);
            }
            Op::LatMse { pred, target, weights } => {
                let pv = self.value(*pred);
                let (h, w) = (pv.shape()[1], pv.shape()[2]);
                let scale = 2.0 * dy.data()[0] / pv.len() as f64;
                let data = pv
                    .data()
                    .iter()
                    .zip(target.data())
                    .enumerate()
                    .map(|(i, (p, t))| scale * weights[(i / w) % h] * (p - t))
                    .collect();
                accumulate(grads, *pred, Tensor::from_vec(pv.shape(), data).expect("shape"));
            }
            Op::WeightedSum { x, coeffs } => {
                let g = dy.data()[0];
                let data = coeffs.data().iter().map(|c| c * g).collect();
                accumulate(grads, *x, Tensor::from_vec(self.value(*x).shape(), data).expect("shape"));
            }
        }
    }
}

fn check_rate(rate: f64) -> Result<(), NumericsError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumericsError::RateOutOfRange(rate));
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}
