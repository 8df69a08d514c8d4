//! The paired-image contrastive captioner.

pub mod config;
pub mod forward;
pub mod generate;
pub mod grid;
pub mod losses;
pub mod params;
pub mod vocab;

pub use config::ModelConfig;
pub use forward::{
    decode_logits, decoder_io, encode_image, encode_text_unimodal, fuse_pair_tokens, pair_forward,
    patchify, prepare_image, regional_cross_attention_block, SampleNodes,
};
pub use generate::{argmax_over, DecodeMode};
pub use grid::{avg_pool_grid, build_regional_mask, causal_mask, RegionalMask, TokenGrid};
pub use losses::{
    captioning_loss, clamp_temperature, contrastive_loss, contrastive_loss_graph, total_loss,
    total_loss_graph, EmbeddingBatch, TAU_MAX, TAU_MIN,
};
pub use params::{init_params, param_names, validate_params, ParamBinding};
pub use vocab::{Vocabulary, BOS, CLS, EOS, PAD};

use crate::tensor::{Element, TensorMap};
use crate::Result;

/// Model = config + named parameters + the precomputed regional mask.
pub struct CocaPairModel<E: Element> {
    pub config: ModelConfig,
    pub params: TensorMap<E>,
    pub regional_mask: RegionalMask,
}

impl<E: Element> CocaPairModel<E> {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        let regional_mask = build_regional_mask(config.grid_side, config.window)?;
        Ok(CocaPairModel {
            config,
            params,
            regional_mask,
        })
    }

    /// Wrap existing parameters (e.g. loaded from a checkpoint).
    pub fn from_parts(config: ModelConfig, params: TensorMap<E>) -> Result<Self> {
        config.validate()?;
        validate_params(&config, &params)?;
        let regional_mask = build_regional_mask(config.grid_side, config.window)?;
        Ok(CocaPairModel {
            config,
            params,
            regional_mask,
        })
    }

    /// Current temperature value.
    pub fn temperature(&self) -> E {
        self.params
            .get("con.temperature")
            .expect("temperature parameter")
            .item()
    }
}
