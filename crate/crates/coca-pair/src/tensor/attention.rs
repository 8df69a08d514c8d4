//! Scaled dot-product attention composites built from graph primitives.

use super::{Element, Graph, NodeId, Tensor};
use crate::{Error, Result};

/// `softmax(Q K^T / sqrt(d) + mask) V` for 2D `Q [m,d]`, `K,V [n,d]`.
///
/// The mask is additive (`0` keeps a key, `-inf` removes it) and may be
/// `[m,n]` or `[1,n]`.
pub fn scaled_dot_attention<E: Element>(
    g: &mut Graph<E>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    mask: Option<&Tensor<E>>,
) -> Result<NodeId> {
    let d = g.value(q).cols();
    if g.value(k).cols() != d {
        return Err(Error::shape(format!(
            "attention dims disagree: q has {d} cols, k has {}",
            g.value(k).cols()
        )));
    }
    if g.value(k).rows() != g.value(v).rows() {
        return Err(Error::shape("attention: k and v row counts differ"));
    }
    let kt = g.transpose(k)?;
    let logits = g.matmul(q, kt)?;
    let scaled = g.scale(logits, 1.0 / (d as f64).sqrt())?;
    let attn = g.softmax_rows(scaled, mask.cloned())?;
    g.matmul(attn, v)
}

/// Multi-head variant: splits the feature dimension into `heads` equal
/// slices, attends per head with the shared mask, and concatenates.
pub fn multi_head_attention<E: Element>(
    g: &mut Graph<E>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    heads: usize,
    mask: Option<&Tensor<E>>,
) -> Result<NodeId> {
    let d = g.value(q).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "feature dim {d} not divisible by {heads} heads"
        )));
    }
    let hd = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * hd, hd)?;
        let kh = g.slice_cols(k, h * hd, hd)?;
        let vh = g.slice_cols(v, h * hd, hd)?;
        outs.push(scaled_dot_attention(g, qh, kh, vh, mask)?);
    }
    g.concat_cols(&outs)
}
