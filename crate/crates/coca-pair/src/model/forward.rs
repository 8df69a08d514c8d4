//! Forward passes: image encoder, unimodal text encoder, regional
//! cross-attention, pair fusion, and the multimodal decoder.

use super::config::ModelConfig;
use super::grid::{causal_mask, RegionalMask};
use super::params::ParamBinding;
use super::vocab::{BOS, CLS, EOS};
use crate::tensor::{multi_head_attention, Element, Graph, NodeId, Tensor};
use crate::{Error, Result};

/// Zero-pad to square and bilinearly resize a grayscale image to
/// `target` x `target`. Pixels must lie in [0, 1].
pub fn prepare_image(pixels: &[f32], width: usize, height: usize, target: usize) -> Result<Vec<f32>> {
    if pixels.len() != width * height {
        return Err(Error::shape(format!(
            "image buffer {} != {width}x{height}",
            pixels.len()
        )));
    }
    if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Data("pixel values outside [0,1]".into()));
    }
    let side = width.max(height);
    let mut square = vec![0.0f32; side * side];
    for y in 0..height {
        square[y * side..y * side + width].copy_from_slice(&pixels[y * width..(y + 1) * width]);
    }
    if side == target {
        return Ok(square);
    }
    let mut out = vec![0.0f32; target * target];
    let scale = side as f32 / target as f32;
    for oy in 0..target {
        let sy = ((oy as f32 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(side - 1);
        let fy = sy - y0 as f32;
        for ox in 0..target {
            let sx = ((ox as f32 + 0.5) * scale - 0.5).clamp(0.0, (side - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(side - 1);
            let fx = sx - x0 as f32;
            let v = square[y0 * side + x0] * (1.0 - fy) * (1.0 - fx)
                + square[y0 * side + x1] * (1.0 - fy) * fx
                + square[y1 * side + x0] * fy * (1.0 - fx)
                + square[y1 * side + x1] * fy * fx;
            out[oy * target + ox] = v;
        }
    }
    Ok(out)
}

/// Cut a square image into non-overlapping patches: `[G^2, patch^2]`.
pub fn patchify<E: Element>(pixels: &[f32], side: usize, patch: usize) -> Result<Tensor<E>> {
    if pixels.len() != side * side {
        return Err(Error::shape(format!(
            "patchify: {} pixels for side {side}",
            pixels.len()
        )));
    }
    if side % patch != 0 {
        return Err(Error::shape(format!(
            "image side {side} not divisible by patch size {patch}"
        )));
    }
    let g = side / patch;
    let mut data = Vec::with_capacity(side * side);
    for gy in 0..g {
        for gx in 0..g {
            for py in 0..patch {
                for px in 0..patch {
                    let y = gy * patch + py;
                    let x = gx * patch + px;
                    data.push(E::from_f64(pixels[y * side + x] as f64));
                }
            }
        }
    }
    Ok(Tensor::from_op(vec![g * g, patch * patch], data))
}

fn layer_norm<E: Element>(
    g: &mut Graph<E>,
    b: &ParamBinding,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    g.layer_norm(x, b.node(&format!("{prefix}.g")), b.node(&format!("{prefix}.b")))
}

/// Q/K/V/out projected multi-head attention. Queries come from `q_in`;
/// keys and values from `kv_in`.
fn attention<E: Element>(
    g: &mut Graph<E>,
    b: &ParamBinding,
    prefix: &str,
    q_in: NodeId,
    kv_in: NodeId,
    heads: usize,
    mask: Option<&Tensor<E>>,
) -> Result<NodeId> {
    let proj = |g: &mut Graph<E>, x: NodeId, w: &str, bias: &str| -> Result<NodeId> {
        let m = g.matmul(x, b.node(&format!("{prefix}.{w}")))?;
        g.add_row(m, b.node(&format!("{prefix}.{bias}")))
    };
    let q = proj(g, q_in, "wq", "bq")?;
    let k = proj(g, kv_in, "wk", "bk")?;
    let v = proj(g, kv_in, "wv", "bv")?;
    let mh = multi_head_attention(g, q, k, v, heads, mask)?;
    proj(g, mh, "wo", "bo")
}

fn ffn<E: Element>(g: &mut Graph<E>, b: &ParamBinding, prefix: &str, x: NodeId) -> Result<NodeId> {
    let h = g.matmul(x, b.node(&format!("{prefix}.w1")))?;
    let h = g.add_row(h, b.node(&format!("{prefix}.b1")))?;
    let h = g.gelu(h)?;
    let h = g.matmul(h, b.node(&format!("{prefix}.w2")))?;
    g.add_row(h, b.node(&format!("{prefix}.b2")))
}

/// Pre-norm encoder block: self-attention + FFN, both with residuals.
fn encoder_block<E: Element>(
    g: &mut Graph<E>,
    b: &ParamBinding,
    prefix: &str,
    x: NodeId,
    heads: usize,
    mask: Option<&Tensor<E>>,
) -> Result<NodeId> {
    let n1 = layer_norm(g, b, &format!("{prefix}.ln1"), x)?;
    let a = attention(g, b, &format!("{prefix}.self"), n1, n1, heads, mask)?;
    let x1 = g.add(x, a)?;
    let n2 = layer_norm(g, b, &format!("{prefix}.ln2"), x1)?;
    let f = ffn(g, b, &format!("{prefix}.ffn"), n2)?;
    g.add(x1, f)
}

/// Encode patchified image pixels into a token grid node `[G^2, d]`.
pub fn encode_image<E: Element>(
    g: &mut Graph<E>,
    b: &ParamBinding,
    cfg: &ModelConfig,
    patches: Tensor<E>,
) -> Result<NodeId> {
    let g2 = cfg.grid_side * cfg.grid_side;
    if patches.rows() != g2 || patches.cols() != cfg.patch_size * cfg.patch_size {
        return Err(Error::shape(format!(
            "patch tensor {:?} does not match config grid {g2} / patch {}",
            patches.shape(),
            cfg.patch_size * cfg.patch_size
        )));
    }
    let p = g.constant(patches);
    let x = g.matmul(p, b.node("img.patch.w"))?;
    let x = g.add_row(x, b.node("img.patch.b"))?;
    let mut x = g.add(x, b.node("img.pos"))?;
    for i in 0..cfg.encoder_layers {
        x = encoder_block(g, b, &format!("img.enc{i}"), x, cfg.num_heads, None)?;
    }
    layer_norm(g, b, "img.ln_out", x)
}

/// Unimodal text encoding. `ids` must already end with the pool token.
/// Returns (per-token features, pooled unit-norm embedding).
pub fn encode_text_unimodal<E: Element>(
    g: &mut Graph<E>,
    b: &ParamBinding,
    cfg: &ModelConfig,
    ids: &[u32],
) -> Result<(NodeId, NodeId)> {
    if ids.is_empty() || *ids.last().unwrap() != CLS {
        return Err(Error::Vocab("text must end with the pool token".into()));
    }
    if ids.len() > cfg.max_text_len + 1 {
        return Err(Error::Vocab(format!(
            "text length {} exceeds max {}",
            ids.len(),
            cfg.max_text_len
        )));
    }
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let tok = g.embed_rows(b.node("txt.tok"), &idx)?;
    let pos = g.slice_rows(b.node("txt.pos"), 0, idx.len())?;
    let mut x = g.add(tok, pos)?;
    for i in 0..cfg.encoder_layers {
        x = encoder_block(g, b, &format!("txt.enc{i}"), x, cfg.num_heads, None)?;
    }
    let feats = layer_norm(g, b, "txt.ln_out", x)?;
    let pooled = g.slice_rows(feats, idx.len() - 1, 1)?;
    let proj = g.matmul(pooled, b.node("con.txt_proj"))?;
    let y = g.l2norm_rows(proj)?;
    Ok((feats, y))
}

/// Regional cross-attention block: self-attention refines the current
/// grid, masked cross-attention reads the prior grid, then FFN; residuals
/// throughout and a final norm.
pub fn regional_cross_attention_block<E: Element>(
    g: &mut Graph<E>,
    b: &ParamBinding,
    cfg: &ModelConfig,
    z_c: NodeId,
    z_p: NodeId,
    mask: &RegionalMask,
) -> Result<NodeId> {
    let (rc, cc) = (g.value(z_c).rows(), g.value(z_c).cols());
    let (rp, cp) = (g.value(z_p).rows(), g.value(z_p).cols());
    if (rc, cc) != (rp, cp) {
        return Err(Error::shape(format!(
            "regional block: grids disagree ({rc}x{cc} vs {rp}x{cp})"
        )));
    }
    if mask.side * mask.side != rc {
        return Err(Error::shape(format!(
            "regional mask side {} does not match grid rows {rc}",
            mask.side
        )));
    }
    let additive = mask.additive_tensor::<E>();

    let n1 = layer_norm(g, b, "reg.ln_q", z_c)?;
    let sa = attention(g, b, "reg.self", n1, n1, cfg.num_heads, None)?;
    let zc1 = g.add(z_c, sa)?;

    let nq = layer_norm(g, b, "reg.ln_c", zc1)?;
    let nkv = layer_norm(g, b, "reg.ln_kv", z_p)?;
    let ca = attention(g, b, "reg.cross", nq, nkv, cfg.num_heads, Some(&additive))?;
    let zc2 = g.add(zc1, ca)?;

    let nf = layer_norm(g, b, "reg.ln_f", zc2)?;
    let f = ffn(g, b, "reg.ffn", nf)?;
    let zc3 = g.add(zc2, f)?;
    layer_norm(g, b, "reg.ln_out", zc3)
}

/// Pool each stream, add its stream embedding, and concatenate in order
/// (current, prior, diff).
pub fn fuse_pair_tokens<E: Element>(
    g: &mut Graph<E>,
    b: &ParamBinding,
    cfg: &ModelConfig,
    z_c: NodeId,
    z_p: NodeId,
    z_o: Option<NodeId>,
) -> Result<NodeId> {
    let mut streams = Vec::with_capacity(3);
    for (z, name) in [(Some(z_c), "stream.current"), (Some(z_p), "stream.prior"), (z_o, "stream.diff")]
    {
        let Some(z) = z else { continue };
        let pooled = g.avg_pool_grid(z, cfg.pool_kernel)?;
        streams.push(g.add_row(pooled, b.node(name))?);
    }
    g.concat_rows(&streams)
}

/// Multimodal decoder: causal self-attention over text, cross-attention to
/// the fused sequence, FFN; returns next-token logits per position.
pub fn decode_logits<E: Element>(
    g: &mut Graph<E>,
    b: &ParamBinding,
    cfg: &ModelConfig,
    input_ids: &[u32],
    fused: NodeId,
) -> Result<NodeId> {
    if input_ids.is_empty() {
        return Err(Error::Vocab("decoder input must be non-empty".into()));
    }
    if input_ids.len() > cfg.max_text_len + 1 {
        return Err(Error::Vocab(format!(
            "decoder input length {} exceeds max {}",
            input_ids.len(),
            cfg.max_text_len
        )));
    }
    let idx: Vec<usize> = input_ids.iter().map(|&i| i as usize).collect();
    let tok = g.embed_rows(b.node("txt.tok"), &idx)?;
    let pos = g.slice_rows(b.node("dec.pos"), 0, idx.len())?;
    let mut x = g.add(tok, pos)?;
    let causal = causal_mask::<E>(idx.len());
    for i in 0..cfg.decoder_layers {
        let prefix = format!("dec.blk{i}");
        let n1 = layer_norm(g, b, &format!("{prefix}.ln1"), x)?;
        let sa = attention(g, b, &format!("{prefix}.self"), n1, n1, cfg.num_heads, Some(&causal))?;
        let x1 = g.add(x, sa)?;
        let n2 = layer_norm(g, b, &format!("{prefix}.ln2"), x1)?;
        let ca = attention(g, b, &format!("{prefix}.cross"), n2, fused, cfg.num_heads, None)?;
        let x2 = g.add(x1, ca)?;
        let n3 = layer_norm(g, b, &format!("{prefix}.ln3"), x2)?;
        let f = ffn(g, b, &format!("{prefix}.ffn"), n3)?;
        x = g.add(x2, f)?;
    }
    let n = layer_norm(g, b, "dec.ln_out", x)?;
    let logits = g.matmul(n, b.node("dec.head.w"))?;
    g.add_row(logits, b.node("dec.head.b"))
}

/// Everything one training sample produces.
pub struct SampleNodes {
    /// Unit-norm image-side contrastive embedding [1, d].
    pub x_emb: NodeId,
    /// Unit-norm text-side contrastive embedding [1, d].
    pub y_emb: NodeId,
    /// Mean captioning NLL for this sample [1, 1].
    pub cap_loss: NodeId,
}

/// Decoder input/target pair: `<bos> t1..tk` predicts `t1..tk <eos>`.
pub fn decoder_io(ids: &[u32], max_len: usize) -> (Vec<u32>, Vec<Option<usize>>) {
    let keep = ids.len().min(max_len.saturating_sub(1));
    let mut input = Vec::with_capacity(keep + 1);
    input.push(BOS);
    input.extend_from_slice(&ids[..keep]);
    let mut targets: Vec<Option<usize>> = ids[..keep].iter().map(|&t| Some(t as usize)).collect();
    targets.push(Some(EOS as usize));
    (input, targets)
}

/// Full pair forward for one sample.
///
/// `patches_prior = None` means an identity pair (prior := current): the
/// grid is encoded once and reused.
pub fn pair_forward<E: Element>(
    g: &mut Graph<E>,
    b: &ParamBinding,
    cfg: &ModelConfig,
    mask: &RegionalMask,
    patches_current: Tensor<E>,
    patches_prior: Option<Tensor<E>>,
    text_ids: &[u32],
) -> Result<SampleNodes> {
    let z_c = encode_image(g, b, cfg, patches_current)?;
    let z_p = match patches_prior {
        Some(p) => encode_image(g, b, cfg, p)?,
        None => z_c,
    };
    let z_o = if cfg.use_regional_stream {
        Some(regional_cross_attention_block(g, b, cfg, z_c, z_p, mask)?)
    } else {
        None
    };
    let fused = fuse_pair_tokens(g, b, cfg, z_c, z_p, z_o)?;

    let mean = g.mean_rows(fused)?;
    let proj = g.matmul(mean, b.node("con.img_proj"))?;
    let x_emb = g.l2norm_rows(proj)?;

    let mut enc_ids: Vec<u32> = text_ids
        .iter()
        .copied()
        .take(cfg.max_text_len)
        .collect();
    enc_ids.push(CLS);
    let (_, y_emb) = encode_text_unimodal(g, b, cfg, &enc_ids)?;

    let (input, targets) = decoder_io(text_ids, cfg.max_text_len);
    let logits = decode_logits(g, b, cfg, &input, fused)?;
    let cap_loss = g.cross_entropy_mean(logits, &targets)?;

    Ok(SampleNodes {
        x_emb,
        y_emb,
        cap_loss,
    })
}
