//! Parameter inventory, initialization, and graph binding.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::tensor::{Element, Graph, NodeId, Tensor, TensorMap};
use crate::{Error, Result};

const INIT_STD: f64 = 0.02;

enum Init {
    Normal,
    Zeros,
    Ones,
    Const(f64),
}

/// Canonical (name, shape, init) list. Registration order is fixed so that
/// seeded initialization is reproducible.
fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.embed_dim;
    let g2 = cfg.grid_side * cfg.grid_side;
    let p2 = cfg.patch_size * cfg.patch_size;
    let v = cfg.vocab_size;
    let tmax = cfg.max_text_len + 1; // room for the bos/pool token
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();

    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        out.push((name, shape, init));
    };

    // Attention + FFN + norms of one transformer block.
    fn block(
        push: &mut impl FnMut(String, Vec<usize>, Init),
        prefix: &str,
        d: usize,
        cross: bool,
    ) {
        for ln in ["ln1", "ln2", "ln3"] {
            if ln == "ln3" && !cross {
                continue;
            }
            push(format!("{prefix}.{ln}.g"), vec![1, d], Init::Ones);
            push(format!("{prefix}.{ln}.b"), vec![1, d], Init::Zeros);
        }
        let attns: &[&str] = if cross { &["self", "cross"] } else { &["self"] };
        for attn in attns {
            for w in ["wq", "wk", "wv", "wo"] {
                push(format!("{prefix}.{attn}.{w}"), vec![d, d], Init::Normal);
            }
            for b in ["bq", "bk", "bv", "bo"] {
                push(format!("{prefix}.{attn}.{b}"), vec![1, d], Init::Zeros);
            }
        }
        push(format!("{prefix}.ffn.w1"), vec![d, 4 * d], Init::Normal);
        push(format!("{prefix}.ffn.b1"), vec![1, 4 * d], Init::Zeros);
        push(format!("{prefix}.ffn.w2"), vec![4 * d, d], Init::Normal);
        push(format!("{prefix}.ffn.b2"), vec![1, d], Init::Zeros);
    }

    // Image encoder (shared by current and prior images).
    push("img.patch.w".into(), vec![p2, d], Init::Normal);
    push("img.patch.b".into(), vec![1, d], Init::Zeros);
    push("img.pos".into(), vec![g2, d], Init::Normal);
    for i in 0..cfg.encoder_layers {
        block(&mut push, &format!("img.enc{i}"), d, false);
    }
    push("img.ln_out.g".into(), vec![1, d], Init::Ones);
    push("img.ln_out.b".into(), vec![1, d], Init::Zeros);

    // Unimodal text encoder.
    push("txt.tok".into(), vec![v, d], Init::Normal);
    push("txt.pos".into(), vec![tmax, d], Init::Normal);
    for i in 0..cfg.encoder_layers {
        block(&mut push, &format!("txt.enc{i}"), d, false);
    }
    push("txt.ln_out.g".into(), vec![1, d], Init::Ones);
    push("txt.ln_out.b".into(), vec![1, d], Init::Zeros);

    // Regional cross-attention module.
    push("reg.ln_q.g".into(), vec![1, d], Init::Ones);
    push("reg.ln_q.b".into(), vec![1, d], Init::Zeros);
    push("reg.ln_c.g".into(), vec![1, d], Init::Ones);
    push("reg.ln_c.b".into(), vec![1, d], Init::Zeros);
    push("reg.ln_kv.g".into(), vec![1, d], Init::Ones);
    push("reg.ln_kv.b".into(), vec![1, d], Init::Zeros);
    push("reg.ln_f.g".into(), vec![1, d], Init::Ones);
    push("reg.ln_f.b".into(), vec![1, d], Init::Zeros);
    push("reg.ln_out.g".into(), vec![1, d], Init::Ones);
    push("reg.ln_out.b".into(), vec![1, d], Init::Zeros);
    for attn in ["self", "cross"] {
        for w in ["wq", "wk", "wv", "wo"] {
            push(format!("reg.{attn}.{w}"), vec![d, d], Init::Normal);
        }
        for b in ["bq", "bk", "bv", "bo"] {
            push(format!("reg.{attn}.{b}"), vec![1, d], Init::Zeros);
        }
    }
    push("reg.ffn.w1".into(), vec![d, 4 * d], Init::Normal);
    push("reg.ffn.b1".into(), vec![1, 4 * d], Init::Zeros);
    push("reg.ffn.w2".into(), vec![4 * d, d], Init::Normal);
    push("reg.ffn.b2".into(), vec![1, d], Init::Zeros);

    // Stream embeddings distinguishing current/prior/diff after pooling.
    push("stream.current".into(), vec![1, d], Init::Normal);
    push("stream.prior".into(), vec![1, d], Init::Normal);
    push("stream.diff".into(), vec![1, d], Init::Normal);

    // Contrastive projections and temperature.
    push("con.img_proj".into(), vec![d, d], Init::Normal);
    push("con.txt_proj".into(), vec![d, d], Init::Normal);
    push(
        "con.temperature".into(),
        vec![1, 1],
        Init::Const(cfg.temperature_init),
    );

    // Multimodal decoder.
    push("dec.pos".into(), vec![tmax, d], Init::Normal);
    for i in 0..cfg.decoder_layers {
        block(&mut push, &format!("dec.blk{i}"), d, true);
    }
    push("dec.ln_out.g".into(), vec![1, d], Init::Ones);
    push("dec.ln_out.b".into(), vec![1, d], Init::Zeros);
    push("dec.head.w".into(), vec![d, v], Init::Normal);
    push("dec.head.b".into(), vec![1, v], Init::Zeros);

    out
}

/// Initialize all parameters from a seed.
pub fn init_params<E: Element>(cfg: &ModelConfig, seed: u64) -> TensorMap<E> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = TensorMap::new();
    for (name, shape, init) in param_specs(cfg) {
        let numel: usize = shape.iter().product();
        let t = match init {
            Init::Normal => Tensor::randn(shape, INIT_STD, &mut rng),
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::from_op(shape, vec![E::one(); numel]),
            Init::Const(c) => Tensor::from_op(shape, vec![E::from_f64(c); numel]),
        };
        map.insert(name, t);
    }
    map
}

/// Check that a parameter map matches the config's inventory exactly.
pub fn validate_params<E: Element>(cfg: &ModelConfig, params: &TensorMap<E>) -> Result<()> {
    let specs = param_specs(cfg);
    if specs.len() != params.len() {
        return Err(Error::config(format!(
            "parameter count mismatch: expected {}, found {}",
            specs.len(),
            params.len()
        )));
    }
    for (name, shape, _) in &specs {
        let t = params
            .get(name)
            .ok_or_else(|| Error::config(format!("missing parameter '{name}'")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::config(format!(
                "parameter '{name}' has shape {:?}, expected {:?}",
                t.shape(),
                shape
            )));
        }
    }
    Ok(())
}

/// Names of all parameters for a config (canonical order).
pub fn param_names(cfg: &ModelConfig) -> Vec<String> {
    param_specs(cfg).into_iter().map(|(n, _, _)| n).collect()
}

/// Node ids of parameters registered in one graph.
pub struct ParamBinding {
    nodes: BTreeMap<String, NodeId>,
}

impl ParamBinding {
    /// Register every parameter as a leaf; `trainable` decides which leaves
    /// participate in gradients.
    pub fn bind<E: Element>(
        g: &mut Graph<E>,
        params: &TensorMap<E>,
        trainable: &dyn Fn(&str) -> bool,
    ) -> Self {
        let mut nodes = BTreeMap::new();
        for (name, tensor) in params {
            let t = if trainable(name) {
                tensor.clone().with_grad()
            } else {
                tensor.clone()
            };
            nodes.insert(name.clone(), g.leaf(t));
        }
        ParamBinding { nodes }
    }

    pub fn node(&self, name: &str) -> NodeId {
        *self
            .nodes
            .get(name)
            .unwrap_or_else(|| panic!("unbound parameter '{name}'"))
    }

    /// Collect gradients of every bound parameter that received one.
    pub fn collect_grads<E: Element>(
        &self,
        grads: &mut crate::tensor::Gradients<E>,
    ) -> BTreeMap<String, Vec<E>> {
        let mut out = BTreeMap::new();
        for (name, &id) in &self.nodes {
            if let Some(g) = grads.take(id) {
                out.insert(name.clone(), g);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_validates() {
        let cfg = ModelConfig::tiny(32);
        let a = init_params::<f64>(&cfg, 7);
        let b = init_params::<f64>(&cfg, 7);
        validate_params(&cfg, &a).unwrap();
        for (name, t) in &a {
            assert_eq!(t.data(), b.get(name).unwrap().data(), "{name}");
        }
    }

    #[test]
    fn names_are_unique() {
        let cfg = ModelConfig::desk(160);
        let names = param_names(&cfg);
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn temperature_initializes_to_config_value() {
        let cfg = ModelConfig::tiny(32);
        let p = init_params::<f64>(&cfg, 0);
        assert_eq!(p.get("con.temperature").unwrap().item(), 0.07);
    }

    #[test]
    fn shape_mismatch_is_detected() {
        let cfg = ModelConfig::tiny(32);
        let mut p = init_params::<f64>(&cfg, 0);
        p.insert("img.patch.w".into(), Tensor::zeros(vec![2, 2]));
        assert!(validate_params(&cfg, &p).is_err());
    }
}
