//! Reverse-mode tape over 2D tensors.
//!
//! A [`Graph`] is built per forward pass: every op appends a node holding
//! its cached activation and parent references, so the node list is already
//! in topological order. [`Graph::backward`] walks it once in reverse.

use std::sync::Arc;

use super::kernels::{col_sum_into, gelu, gelu_grad, matmul_nn, matmul_nt, matmul_tn};
use super::{Element, Tensor};
use crate::{Error, Result};

/// Normalization epsilon used by every layer norm in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op<E: Element> {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddRowBroadcast { a: usize, b: usize },
    Scale { a: usize, c: f64 },
    MulScalar { a: usize, s: usize },
    Recip { a: usize },
    Gelu { a: usize },
    SoftmaxRows { a: usize, #[allow(dead_code)] mask: Option<Tensor<E>> },
    LayerNorm { a: usize, gain: usize, bias: usize },
    Transpose { a: usize },
    SliceRows { a: usize, start: usize },
    SliceCols { a: usize, start: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    EmbedRows { table: usize, ids: Arc<Vec<usize>> },
    AvgPoolGrid { a: usize, side: usize, kernel: usize },
    MeanRows { a: usize },
    L2NormRows { a: usize },
    CrossEntropyMean { logits: usize, targets: Arc<Vec<Option<usize>>> },
}

struct Node<E: Element> {
    value: Tensor<E>,
    op: Op<E>,
    needs_grad: bool,
}

/// Per-node gradients produced by a backward pass.
pub struct Gradients<E: Element> {
    grads: Vec<Option<Vec<E>>>,
}

impl<E: Element> Gradients<E> {
    /// Gradient buffer of a node, if any gradient reached it.
    pub fn get(&self, id: NodeId) -> Option<&[E]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Take ownership of a node's gradient.
    pub fn take(&mut self, id: NodeId) -> Option<Vec<E>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Operation tape; see module docs.
pub struct Graph<E: Element> {
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cached activation of a node.
    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.nodes[id.0].value
    }

    /// Register an input tensor; it participates in gradients iff
    /// `t.requires_grad()` is set.
    pub fn leaf(&mut self, t: Tensor<E>) -> NodeId {
        let needs = t.requires_grad();
        self.push(t, Op::Leaf, needs)
    }

    /// Register a constant input (never differentiated).
    pub fn constant(&mut self, t: Tensor<E>) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn dims2(&self, id: NodeId, ctx: &str) -> Result<(usize, usize)> {
        let t = self.value(id);
        if !t.is_2d() {
            return Err(Error::shape(format!("{ctx}: expected 2D, got {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    // ── Forward ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dims disagree: {m}x{k} vs {k2}x{n}"
            )));
        }
        let mut out = vec![E::zero(); m * n];
        matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_op(vec![m, n], out),
            Op::MatMul { a: a.0, b: b.0 },
            needs,
        ))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<E> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::from_op(shape, data), Op::Add { a: a.0, b: b.0 }, needs))
    }

    /// `a [R,C] + b [1,C]` broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "add_row lhs")?;
        let (br, bc) = self.dims2(b, "add_row rhs")?;
        if br != 1 || bc != c {
            return Err(Error::shape(format!(
                "add_row rhs must be 1x{c}, got {br}x{bc}"
            )));
        }
        let bv = self.value(b).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, &y) in row.iter_mut().zip(&bv) {
                *x = *x + y;
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::from_op(vec![r, c], data),
            Op::AddRowBroadcast { a: a.0, b: b.0 },
            needs,
        ))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let ce = E::from_f64(c);
        let data: Vec<E> = self.value(a).data().iter().map(|&x| x * ce).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_op(shape, data), Op::Scale { a: a.0, c }, needs))
    }

    /// Elementwise multiply by a 1x1 node (broadcast scalar).
    pub fn mul_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).numel() != 1 {
            return Err(Error::shape("mul_scalar rhs must be 1x1"));
        }
        let sv = self.value(s).item();
        let data: Vec<E> = self.value(a).data().iter().map(|&x| x * sv).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(
            Tensor::from_op(shape, data),
            Op::MulScalar { a: a.0, s: s.0 },
            needs,
        ))
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<E> = self.value(a).data().iter().map(|&x| E::one() / x).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_op(shape, data), Op::Recip { a: a.0 }, needs))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let data: Vec<E> = self.value(a).data().iter().map(|&x| gelu(x)).collect();
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::from_op(shape, data), Op::Gelu { a: a.0 }, needs))
    }

    /// Row-wise softmax over the last dimension with an optional additive
    /// mask (entries 0 or -inf). The mask may be `[R,C]` or `[1,C]`.
    ///
    /// Masked positions come out exactly 0. A fully masked row is an error.
    pub fn softmax_rows(&mut self, a: NodeId, mask: Option<Tensor<E>>) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "softmax")?;
        if let Some(m) = &mask {
            let ok = (m.rows() == r || m.rows() == 1) && m.cols() == c;
            if !ok {
                return Err(Error::shape(format!(
                    "softmax mask {:?} not broadcastable to {r}x{c}",
                    m.shape()
                )));
            }
        }
        let x = self.value(a).data();
        let mut out = vec![E::zero(); r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mrow = mask.as_ref().map(|m| {
                let mi = if m.rows() == 1 { 0 } else { i };
                &m.data()[mi * c..(mi + 1) * c]
            });
            let logit = |j: usize| match mrow {
                Some(mr) => row[j] + mr[j],
                None => row[j],
            };
            let mut mx = E::neg_infinity();
            for j in 0..c {
                let l = logit(j);
                if l > mx {
                    mx = l;
                }
            }
            if mx == E::neg_infinity() {
                return Err(Error::EmptyAttentionSupport);
            }
            let orow = &mut out[i * c..(i + 1) * c];
            let mut sum = E::zero();
            for (j, o) in orow.iter_mut().enumerate() {
                let e = (logit(j) - mx).exp();
                *o = e;
                sum = sum + e;
            }
            for o in orow.iter_mut() {
                *o = *o / sum;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_op(vec![r, c], out),
            Op::SoftmaxRows { a: a.0, mask },
            needs,
        ))
    }

    /// Layer normalization over the last dimension followed by the affine
    /// `gain * xhat + bias`; `gain`/`bias` are `[1,C]`.
    pub fn layer_norm(&mut self, a: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "layer_norm")?;
        if c < 2 {
            return Err(Error::shape("layer_norm needs last dim >= 2"));
        }
        for (id, name) in [(gain, "gain"), (bias, "bias")] {
            let (gr, gc) = self.dims2(id, "layer_norm affine")?;
            if gr != 1 || gc != c {
                return Err(Error::shape(format!(
                    "layer_norm {name} must be 1x{c}, got {gr}x{gc}"
                )));
            }
        }
        let eps = E::from_f64(LAYER_NORM_EPS);
        let inv_c = E::one() / E::from_f64(c as f64);
        let x = self.value(a).data();
        let gv = self.value(gain).data().to_vec();
        let bv = self.value(bias).data().to_vec();
        let mut out = vec![E::zero(); r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mut mean = E::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_c;
            let mut var = E::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_c;
            let inv_std = E::one() / (var + eps).sqrt();
            let orow = &mut out[i * c..(i + 1) * c];
            for j in 0..c {
                orow[j] = (row[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        let needs = self.needs(a) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::from_op(vec![r, c], out),
            Op::LayerNorm {
                a: a.0,
                gain: gain.0,
                bias: bias.0,
            },
            needs,
        ))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "transpose")?;
        let x = self.value(a).data();
        let mut out = vec![E::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = x[i * c + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_op(vec![c, r], out),
            Op::Transpose { a: a.0 },
            needs,
        ))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "slice_rows")?;
        if start + len > r || len == 0 {
            return Err(Error::shape(format!(
                "slice_rows [{start}, {}) out of 0..{r}",
                start + len
            )));
        }
        let data = self.value(a).data()[start * c..(start + len) * c].to_vec();
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_op(vec![len, c], data),
            Op::SliceRows { a: a.0, start },
            needs,
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "slice_cols")?;
        if start + len > c || len == 0 {
            return Err(Error::shape(format!(
                "slice_cols [{start}, {}) out of 0..{c}",
                start + len
            )));
        }
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_op(vec![r, len], data),
            Op::SliceCols { a: a.0, start },
            needs,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows of zero parts"));
        }
        let (_, c) = self.dims2(parts[0], "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_rows part")?;
            if pc != c {
                return Err(Error::shape(format!(
                    "concat_rows column mismatch: {pc} vs {c}"
                )));
            }
            rows += pr;
            data.extend_from_slice(self.value(p).data());
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_op(vec![rows, c], data),
            Op::ConcatRows {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            needs,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols of zero parts"));
        }
        let (r, _) = self.dims2(parts[0], "concat_cols")?;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols part")?;
            if pr != r {
                return Err(Error::shape(format!("concat_cols row mismatch: {pr} vs {r}")));
            }
            cols += pc;
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for &p in parts {
                let pc = self.value(p).cols();
                data.extend_from_slice(&self.value(p).data()[i * pc..(i + 1) * pc]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::from_op(vec![r, cols], data),
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            needs,
        ))
    }

    /// Gather rows of `table` by token id.
    pub fn embed_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.dims2(table, "embed_rows")?;
        if ids.is_empty() {
            return Err(Error::shape("embed_rows with empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Vocab(format!("token id {bad} out of range 0..{v}")));
        }
        let x = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&x[i * d..(i + 1) * d]);
        }
        let needs = self.needs(table);
        Ok(self.push(
            Tensor::from_op(vec![ids.len(), d], data),
            Op::EmbedRows {
                table: table.0,
                ids: Arc::new(ids.to_vec()),
            },
            needs,
        ))
    }

    /// Non-overlapping 2D average pooling over a row-major `side*side x d`
    /// token grid; stride equals `kernel`.
    pub fn avg_pool_grid(&mut self, a: NodeId, kernel: usize) -> Result<NodeId> {
        let (r, d) = self.dims2(a, "avg_pool_grid")?;
        let side = (r as f64).sqrt().round() as usize;
        if side * side != r {
            return Err(Error::shape(format!(
                "avg_pool_grid input has {r} rows, not a square grid"
            )));
        }
        if kernel == 0 || side % kernel != 0 {
            return Err(Error::shape(format!(
                "grid side {side} not divisible by pool kernel {kernel}"
            )));
        }
        let oside = side / kernel;
        let x = self.value(a).data();
        let inv = E::one() / E::from_f64((kernel * kernel) as f64);
        let mut out = vec![E::zero(); oside * oside * d];
        for oy in 0..oside {
            for ox in 0..oside {
                let orow = &mut out[(oy * oside + ox) * d..(oy * oside + ox + 1) * d];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let iy = oy * kernel + ky;
                        let ix = ox * kernel + kx;
                        let irow = &x[(iy * side + ix) * d..(iy * side + ix + 1) * d];
                        for (o, &v) in orow.iter_mut().zip(irow) {
                            *o = *o + v;
                        }
                    }
                }
                for o in orow.iter_mut() {
                    *o = *o * inv;
                }
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_op(vec![oside * oside, d], out),
            Op::AvgPoolGrid {
                a: a.0,
                side,
                kernel,
            },
            needs,
        ))
    }

    /// Mean over rows: `[R,C] -> [1,C]`.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "mean_rows")?;
        let inv = E::one() / E::from_f64(r as f64);
        let x = self.value(a).data();
        let mut out = vec![E::zero(); c];
        col_sum_into(x, r, c, &mut out);
        for o in out.iter_mut() {
            *o = *o * inv;
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_op(vec![1, c], out),
            Op::MeanRows { a: a.0 },
            needs,
        ))
    }

    /// Normalize every row to unit L2 norm.
    pub fn l2norm_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "l2norm_rows")?;
        let x = self.value(a).data();
        let mut out = vec![E::zero(); r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mut sq = E::zero();
            for &v in row {
                sq = sq + v * v;
            }
            if sq == E::zero() {
                return Err(Error::shape("cannot L2-normalize a zero row"));
            }
            let inv = E::one() / sq.sqrt();
            for (o, &v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v * inv;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::from_op(vec![r, c], out),
            Op::L2NormRows { a: a.0 },
            needs,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. `None` targets (padding) are excluded from the mean.
    pub fn cross_entropy_mean(
        &mut self,
        logits: NodeId,
        targets: &[Option<usize>],
    ) -> Result<NodeId> {
        let (r, c) = self.dims2(logits, "cross_entropy")?;
        if targets.len() != r {
            return Err(Error::shape(format!(
                "cross_entropy: {} targets for {r} rows",
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::shape(format!(
                "cross_entropy: target {bad} out of range 0..{c}"
            )));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::shape("cross_entropy: all positions padded"));
        }
        let x = self.value(logits).data();
        let mut total = E::zero();
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = t else { continue };
            let row = &x[i * c..(i + 1) * c];
            let mut mx = row[0];
            for &v in &row[1..] {
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = E::zero();
            for &v in row {
                sum = sum + (v - mx).exp();
            }
            total = total - (row[*t] - mx - sum.ln());
        }
        let loss = total / E::from_f64(count as f64);
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::from_op(vec![1, 1], vec![loss]),
            Op::CrossEntropyMean {
                logits: logits.0,
                targets: Arc::new(targets.to_vec()),
            },
            needs,
        ))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Backward from a scalar loss node with seed gradient 1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<E>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward target must be scalar"));
        }
        self.backward_from(&[(loss, vec![E::one()])])
    }

    /// Backward from explicit output seeds (used when a downstream graph
    /// supplies gradients for this graph's outputs).
    pub fn backward_from(&self, seeds: &[(NodeId, Vec<E>)]) -> Result<Gradients<E>> {
        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        for (id, seed) in seeds {
            if seed.len() != self.value(*id).numel() {
                return Err(Error::shape(format!(
                    "seed gradient length {} != node numel {}",
                    seed.len(),
                    self.value(*id).numel()
                )));
            }
            accumulate(&mut grads[id.0], seed);
        }
        for i in (0..self.nodes.len()).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[E], grads: &mut [Option<Vec<E>>]) -> Result<()> {
        let val = |idx: usize| self.nodes[idx].value.data();
        let rows = |idx: usize| self.nodes[idx].value.rows();
        let cols = |idx: usize| self.nodes[idx].value.cols();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k, n) = (rows(*a), cols(*a), cols(*b));
                if self.nodes[*a].needs_grad {
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); m * k]);
                    matmul_nt(g, val(*b), m, n, k, da);
                }
                if self.nodes[*b].needs_grad {
                    let db = grads[*b].get_or_insert_with(|| vec![E::zero(); k * n]);
                    matmul_tn(val(*a), g, k, m, n, db);
                }
            }
            Op::Add { a, b } => {
                for idx in [*a, *b] {
                    if self.nodes[idx].needs_grad {
                        accumulate(&mut grads[idx], g);
                    }
                }
            }
            Op::AddRowBroadcast { a, b } => {
                if self.nodes[*a].needs_grad {
                    accumulate(&mut grads[*a], g);
                }
                if self.nodes[*b].needs_grad {
                    let c = cols(*b);
                    let db = grads[*b].get_or_insert_with(|| vec![E::zero(); c]);
                    col_sum_into(g, g.len() / c, c, db);
                }
            }
            Op::Scale { a, c } => {
                if self.nodes[*a].needs_grad {
                    let ce = E::from_f64(*c);
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); g.len()]);
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d = *d + gv * ce;
                    }
                }
            }
            Op::MulScalar { a, s } => {
                let sv = self.nodes[*s].value.item();
                if self.nodes[*a].needs_grad {
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); g.len()]);
                    for (d, &gv) in da.iter_mut().zip(g) {
                        *d = *d + gv * sv;
                    }
                }
                if self.nodes[*s].needs_grad {
                    let mut acc = E::zero();
                    for (&gv, &av) in g.iter().zip(val(*a)) {
                        acc = acc + gv * av;
                    }
                    accumulate(&mut grads[*s], &[acc]);
                }
            }
            Op::Recip { a } => {
                if self.nodes[*a].needs_grad {
                    let y = val(i);
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); g.len()]);
                    for ((d, &gv), &yv) in da.iter_mut().zip(g).zip(y) {
                        *d = *d - gv * yv * yv;
                    }
                }
            }
            Op::Gelu { a } => {
                if self.nodes[*a].needs_grad {
                    let x = val(*a);
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); g.len()]);
                    for ((d, &gv), &xv) in da.iter_mut().zip(g).zip(x) {
                        *d = *d + gv * gelu_grad(xv);
                    }
                }
            }
            Op::SoftmaxRows { a, .. } => {
                if self.nodes[*a].needs_grad {
                    let y = val(i);
                    let c = cols(i);
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); g.len()]);
                    for r in 0..rows(i) {
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let mut dot = E::zero();
                        for (&yv, &gv) in yr.iter().zip(gr) {
                            dot = dot + yv * gv;
                        }
                        let dr = &mut da[r * c..(r + 1) * c];
                        for j in 0..c {
                            // masked outputs are exactly 0, so they propagate 0
                            dr[j] = (yr[j] * (gr[j] - dot)) + dr[j];
                        }
                    }
                }
            }
            Op::LayerNorm { a, gain, bias } => {
                let c = cols(*a);
                let r = rows(*a);
                let x = val(*a);
                let gv = val(*gain);
                let eps = E::from_f64(LAYER_NORM_EPS);
                let inv_c = E::one() / E::from_f64(c as f64);
                let needs_a = self.nodes[*a].needs_grad;
                let needs_gain = self.nodes[*gain].needs_grad;
                let needs_bias = self.nodes[*bias].needs_grad;
                let mut da = if needs_a { vec![E::zero(); r * c] } else { Vec::new() };
                let mut dgain = if needs_gain { vec![E::zero(); c] } else { Vec::new() };
                let mut dbias = if needs_bias { vec![E::zero(); c] } else { Vec::new() };
                let mut xhat = vec![E::zero(); c];
                let mut dxhat = vec![E::zero(); c];
                for rr in 0..r {
                    let row = &x[rr * c..(rr + 1) * c];
                    let grow = &g[rr * c..(rr + 1) * c];
                    let mut mean = E::zero();
                    for &v in row {
                        mean = mean + v;
                    }
                    mean = mean * inv_c;
                    let mut var = E::zero();
                    for &v in row {
                        let d = v - mean;
                        var = var + d * d;
                    }
                    var = var * inv_c;
                    let inv_std = E::one() / (var + eps).sqrt();
                    for j in 0..c {
                        xhat[j] = (row[j] - mean) * inv_std;
                    }
                    if needs_gain {
                        for j in 0..c {
                            dgain[j] = dgain[j] + grow[j] * xhat[j];
                        }
                    }
                    if needs_bias {
                        for j in 0..c {
                            dbias[j] = dbias[j] + grow[j];
                        }
                    }
                    if needs_a {
                        let mut sum_dxhat = E::zero();
                        let mut sum_dxhat_xhat = E::zero();
                        for j in 0..c {
                            dxhat[j] = grow[j] * gv[j];
                            sum_dxhat = sum_dxhat + dxhat[j];
                            sum_dxhat_xhat = sum_dxhat_xhat + dxhat[j] * xhat[j];
                        }
                        let dr = &mut da[rr * c..(rr + 1) * c];
                        for j in 0..c {
                            dr[j] = inv_std
                                * (dxhat[j] - inv_c * sum_dxhat - xhat[j] * inv_c * sum_dxhat_xhat);
                        }
                    }
                }
                if needs_a {
                    accumulate(&mut grads[*a], &da);
                }
                if needs_gain {
                    accumulate(&mut grads[*gain], &dgain);
                }
                if needs_bias {
                    accumulate(&mut grads[*bias], &dbias);
                }
            }
            Op::Transpose { a } => {
                if self.nodes[*a].needs_grad {
                    let (r, c) = (rows(i), cols(i));
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); r * c]);
                    for ri in 0..r {
                        for ci in 0..c {
                            da[ci * r + ri] = da[ci * r + ri] + g[ri * c + ci];
                        }
                    }
                }
            }
            Op::SliceRows { a, start } => {
                if self.nodes[*a].needs_grad {
                    let c = cols(*a);
                    let total = rows(*a) * c;
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); total]);
                    for (d, &gv) in da[start * c..start * c + g.len()].iter_mut().zip(g) {
                        *d = *d + gv;
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if self.nodes[*a].needs_grad {
                    let (ar, ac) = (rows(*a), cols(*a));
                    let lc = cols(i);
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); ar * ac]);
                    for ri in 0..ar {
                        let src = &g[ri * lc..(ri + 1) * lc];
                        let dst = &mut da[ri * ac + start..ri * ac + start + lc];
                        for (d, &gv) in dst.iter_mut().zip(src) {
                            *d = *d + gv;
                        }
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let pn = self.nodes[p].value.numel();
                    if self.nodes[p].needs_grad {
                        accumulate(&mut grads[p], &g[offset..offset + pn]);
                    }
                    offset += pn;
                }
            }
            Op::ConcatCols { parts } => {
                let r = rows(i);
                let total_c = cols(i);
                let mut offset = 0;
                for &p in parts {
                    let pc = cols(p);
                    if self.nodes[p].needs_grad {
                        let dp = grads[p].get_or_insert_with(|| vec![E::zero(); r * pc]);
                        for ri in 0..r {
                            let src = &g[ri * total_c + offset..ri * total_c + offset + pc];
                            let dst = &mut dp[ri * pc..(ri + 1) * pc];
                            for (d, &gv) in dst.iter_mut().zip(src) {
                                *d = *d + gv;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::EmbedRows { table, ids } => {
                if self.nodes[*table].needs_grad {
                    let d = cols(*table);
                    let vn = rows(*table) * d;
                    let dt = grads[*table].get_or_insert_with(|| vec![E::zero(); vn]);
                    for (pos, &id) in ids.iter().enumerate() {
                        let src = &g[pos * d..(pos + 1) * d];
                        let dst = &mut dt[id * d..(id + 1) * d];
                        for (dv, &gv) in dst.iter_mut().zip(src) {
                            *dv = *dv + gv;
                        }
                    }
                }
            }
            Op::AvgPoolGrid { a, side, kernel } => {
                if self.nodes[*a].needs_grad {
                    let d = cols(*a);
                    let oside = side / kernel;
                    let inv = E::one() / E::from_f64((kernel * kernel) as f64);
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); side * side * d]);
                    for oy in 0..oside {
                        for ox in 0..oside {
                            let grow = &g[(oy * oside + ox) * d..(oy * oside + ox + 1) * d];
                            for ky in 0..*kernel {
                                for kx in 0..*kernel {
                                    let iy = oy * kernel + ky;
                                    let ix = ox * kernel + kx;
                                    let dst = &mut da[(iy * side + ix) * d..(iy * side + ix + 1) * d];
                                    for (dv, &gv) in dst.iter_mut().zip(grow) {
                                        *dv = *dv + gv * inv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::MeanRows { a } => {
                if self.nodes[*a].needs_grad {
                    let (r, c) = (rows(*a), cols(*a));
                    let inv = E::one() / E::from_f64(r as f64);
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); r * c]);
                    for ri in 0..r {
                        let dst = &mut da[ri * c..(ri + 1) * c];
                        for (dv, &gv) in dst.iter_mut().zip(g) {
                            *dv = *dv + gv * inv;
                        }
                    }
                }
            }
            Op::L2NormRows { a } => {
                if self.nodes[*a].needs_grad {
                    let (r, c) = (rows(*a), cols(*a));
                    let x = val(*a);
                    let y = val(i);
                    let da = grads[*a].get_or_insert_with(|| vec![E::zero(); r * c]);
                    for ri in 0..r {
                        let xr = &x[ri * c..(ri + 1) * c];
                        let yr = &y[ri * c..(ri + 1) * c];
                        let gr = &g[ri * c..(ri + 1) * c];
                        let mut sq = E::zero();
                        for &v in xr {
                            sq = sq + v * v;
                        }
                        let inv_norm = E::one() / sq.sqrt();
                        let mut dot = E::zero();
                        for (&yv, &gv) in yr.iter().zip(gr) {
                            dot = dot + yv * gv;
                        }
                        let dr = &mut da[ri * c..(ri + 1) * c];
                        for j in 0..c {
                            dr[j] = dr[j] + (gr[j] - yr[j] * dot) * inv_norm;
                        }
                    }
                }
            }
            Op::CrossEntropyMean { logits, targets } => {
                if self.nodes[*logits].needs_grad {
                    let (r, c) = (rows(*logits), cols(*logits));
                    let x = val(*logits);
                    let count = targets.iter().filter(|t| t.is_some()).count();
                    let scale = g[0] / E::from_f64(count as f64);
                    let da = grads[*logits].get_or_insert_with(|| vec![E::zero(); r * c]);
                    for (ri, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        let row = &x[ri * c..(ri + 1) * c];
                        let mut mx = row[0];
                        for &v in &row[1..] {
                            if v > mx {
                                mx = v;
                            }
                        }
                        let mut sum = E::zero();
                        for &v in row {
                            sum = sum + (v - mx).exp();
                        }
                        let dr = &mut da[ri * c..(ri + 1) * c];
                        for j in 0..c {
                            let p = (row[j] - mx).exp() / sum;
                            let delta = if j == *t { E::one() } else { E::zero() };
                            dr[j] = dr[j] + (p - delta) * scale;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate<E: Element>(slot: &mut Option<Vec<E>>, src: &[E]) {
    match slot {
        Some(dst) => {
            debug_assert_eq!(dst.len(), src.len());
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + s;
            }
        }
        None => *slot = Some(src.to_vec()),
    }
}
