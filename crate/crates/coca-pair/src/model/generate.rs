//! Greedy and constrained autoregressive decoding.

use super::forward::{decode_logits, encode_image, fuse_pair_tokens, patchify, regional_cross_attention_block};
use super::params::ParamBinding;
use super::vocab::{BOS, EOS};
use super::CocaPairModel;
use crate::tensor::{Element, Graph, Tensor};
use crate::{Error, Result};

/// Decoding mode: greedy to end-of-text, or a single constrained choice.
#[derive(Debug, Clone)]
pub enum DecodeMode<'a> {
    Greedy,
    /// Compare next-token logits only over this candidate set and append
    /// the argmax choice.
    Constrained(&'a [u32]),
}

impl<E: Element> CocaPairModel<E> {
    /// Encode an image pair and return the fused sequence values
    /// (inference only, no gradients).
    pub fn encode_pair(&self, current: &[f32], prior: &[f32]) -> Result<Tensor<E>> {
        let cfg = &self.config;
        let mut g = Graph::new();
        let b = ParamBinding::bind(&mut g, &self.params, &|_| false);
        let pc = patchify::<E>(current, cfg.image_side, cfg.patch_size)?;
        let z_c = encode_image(&mut g, &b, cfg, pc)?;
        let z_p = if current == prior {
            z_c
        } else {
            let pp = patchify::<E>(prior, cfg.image_side, cfg.patch_size)?;
            encode_image(&mut g, &b, cfg, pp)?
        };
        let z_o = if cfg.use_regional_stream {
            Some(regional_cross_attention_block(
                &mut g,
                &b,
                cfg,
                z_c,
                z_p,
                &self.regional_mask,
            )?)
        } else {
            None
        };
        let fused = fuse_pair_tokens(&mut g, &b, cfg, z_c, z_p, z_o)?;
        Ok(g.value(fused).clone())
    }

    /// Next-token logits after `prefix` given an already-encoded fused
    /// sequence.
    pub fn next_token_logits(&self, fused: &Tensor<E>, prefix: &[u32]) -> Result<Vec<E>> {
        let cfg = &self.config;
        let mut g = Graph::new();
        let b = ParamBinding::bind(&mut g, &self.params, &|_| false);
        let fused_node = g.constant(fused.clone());
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(BOS);
        input.extend_from_slice(prefix);
        let logits = decode_logits(&mut g, &b, cfg, &input, fused_node)?;
        let t = g.value(logits);
        let v = t.cols();
        let last = t.data()[(t.rows() - 1) * v..].to_vec();
        Ok(last)
    }

    /// Decode from a prefix over an image pair.
    ///
    /// Greedy mode extends the prefix token-by-token (most probable next
    /// token) until end-of-text or `max_len`. Constrained mode appends the
    /// argmax over the candidate set. Ties resolve to the lowest token id,
    /// so decoding is deterministic.
    pub fn generate_text(
        &self,
        current: &[f32],
        prior: &[f32],
        prefix: &[u32],
        max_len: usize,
        mode: DecodeMode<'_>,
    ) -> Result<Vec<u32>> {
        if prefix.len() > max_len {
            return Err(Error::config(format!(
                "prefix length {} exceeds max_len {max_len}",
                prefix.len()
            )));
        }
        let mut out = prefix.to_vec();
        if prefix.len() == max_len {
            return Ok(out);
        }
        let max_len = max_len.min(self.config.max_text_len);
        let fused = self.encode_pair(current, prior)?;
        match mode {
            DecodeMode::Constrained(choices) => {
                if choices.is_empty() {
                    return Err(Error::config("constrained decoding needs choices"));
                }
                let logits = self.next_token_logits(&fused, &out)?;
                let pick = argmax_over(&logits, choices)?;
                out.push(pick);
            }
            DecodeMode::Greedy => {
                while out.len() < max_len {
                    let logits = self.next_token_logits(&fused, &out)?;
                    let (best, _) = logits
                        .iter()
                        .enumerate()
                        .fold((0usize, E::neg_infinity()), |(bi, bv), (i, &v)| {
                            if v > bv {
                                (i, v)
                            } else {
                                (bi, bv)
                            }
                        });
                    if best as u32 == EOS {
                        break;
                    }
                    out.push(best as u32);
                }
            }
        }
        Ok(out)
    }
}

/// Argmax restricted to `choices`; first choice wins ties.
pub fn argmax_over<E: Element>(logits: &[E], choices: &[u32]) -> Result<u32> {
    if choices.is_empty() {
        return Err(Error::config("empty choice set"));
    }
    let mut best = choices[0];
    let mut best_v = E::neg_infinity();
    for &c in choices {
        let v = *logits
            .get(c as usize)
            .ok_or_else(|| Error::Vocab(format!("choice {c} out of vocab range")))?;
        if v > best_v {
            best_v = v;
            best = c;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    #[test]
    fn constrained_argmax_picks_highest() {
        let logits = vec![0.0f64, 2.0, 1.0, 0.5];
        assert_eq!(argmax_over(&logits, &[1, 2, 3]).unwrap(), 1);
        assert_eq!(argmax_over(&logits, &[3, 2]).unwrap(), 2);
        assert!(argmax_over::<f64>(&logits, &[]).is_err());
    }

    #[test]
    fn constant_shift_does_not_change_choice() {
        let logits = vec![0.2f64, 2.0, 1.0];
        let shifted: Vec<f64> = logits.iter().map(|v| v + 123.0).collect();
        assert_eq!(
            argmax_over(&logits, &[0, 1, 2]).unwrap(),
            argmax_over(&shifted, &[0, 1, 2]).unwrap()
        );
    }

    #[test]
    fn exhausted_budget_returns_prefix() {
        let cfg = ModelConfig::tiny(32);
        let m = CocaPairModel::<f64>::new(cfg.clone(), 1).unwrap();
        let img = vec![0.5f32; cfg.image_side * cfg.image_side];
        let prefix = vec![5u32, 6];
        let out = m
            .generate_text(&img, &img, &prefix, 2, DecodeMode::Greedy)
            .unwrap();
        assert_eq!(out, prefix);
    }

    #[test]
    fn greedy_is_deterministic_and_bounded() {
        let cfg = ModelConfig::tiny(32);
        let m = CocaPairModel::<f64>::new(cfg.clone(), 1).unwrap();
        let img: Vec<f32> = (0..cfg.image_side * cfg.image_side)
            .map(|i| (i % 5) as f32 / 5.0)
            .collect();
        let a = m.generate_text(&img, &img, &[], 6, DecodeMode::Greedy).unwrap();
        let b = m.generate_text(&img, &img, &[], 6, DecodeMode::Greedy).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 6);
    }

    #[test]
    fn constrained_returns_one_of_the_choices() {
        let cfg = ModelConfig::tiny(32);
        let m = CocaPairModel::<f64>::new(cfg.clone(), 2).unwrap();
        let img = vec![0.3f32; cfg.image_side * cfg.image_side];
        let img2 = vec![0.7f32; cfg.image_side * cfg.image_side];
        let choices = [7u32, 9, 11];
        let out = m
            .generate_text(&img, &img2, &[5], 8, DecodeMode::Constrained(&choices))
            .unwrap();
        assert_eq!(out.len(), 2);
        assert!(choices.contains(&out[1]));
    }
}
