//! Model hyperparameters and the structured-text config format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Network geometry and loss hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input image side in pixels (square after padding/resizing).
    pub image_side: usize,
    pub patch_size: usize,
    /// Token grid side; must equal `image_side / patch_size`.
    pub grid_side: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    /// Transformer depth of the image and unimodal text encoders.
    pub encoder_layers: usize,
    /// Transformer depth of the multimodal decoder.
    pub decoder_layers: usize,
    /// Regional attention window side (odd).
    pub window: usize,
    /// Average-pooling kernel applied per stream before the decoder.
    pub pool_kernel: usize,
    pub vocab_size: usize,
    /// Maximum text length in tokens (excluding bos/pool tokens).
    pub max_text_len: usize,
    /// Captioning loss weight.
    pub lambda_cap: f64,
    pub temperature_init: f64,
    pub temperature_learnable: bool,
    /// When false, the fused sequence carries only the current and prior
    /// streams (architecture ablation).
    pub use_regional_stream: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(0)
    }
}

impl ModelConfig {
    /// Desk-scale defaults: 48px images, 12x12 grid, 64-dim features.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            image_side: 48,
            patch_size: 4,
            grid_side: 12,
            embed_dim: 64,
            num_heads: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            window: 3,
            pool_kernel: 3,
            vocab_size,
            max_text_len: 64,
            lambda_cap: 2.0,
            temperature_init: 0.07,
            temperature_learnable: true,
            use_regional_stream: true,
        }
    }

    /// Tiny configuration for gradient checks: 4x4 grid, 16-dim features.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            image_side: 8,
            patch_size: 2,
            grid_side: 4,
            embed_dim: 16,
            num_heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            window: 3,
            pool_kernel: 2,
            vocab_size,
            max_text_len: 8,
            lambda_cap: 2.0,
            temperature_init: 0.07,
            temperature_learnable: true,
            use_regional_stream: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_side % self.patch_size != 0 {
            return Err(Error::config(format!(
                "image side {} not divisible by patch size {}",
                self.image_side, self.patch_size
            )));
        }
        if self.grid_side != self.image_side / self.patch_size {
            return Err(Error::config(format!(
                "grid_side {} != image_side/patch_size {}",
                self.grid_side,
                self.image_side / self.patch_size
            )));
        }
        if self.window % 2 == 0 {
            return Err(Error::config(format!("window {} must be odd", self.window)));
        }
        if self.window > 2 * self.grid_side - 1 {
            return Err(Error::config(format!(
                "window {} exceeds 2G-1 = {}",
                self.window,
                2 * self.grid_side - 1
            )));
        }
        if self.pool_kernel == 0 || self.grid_side % self.pool_kernel != 0 {
            return Err(Error::config(format!(
                "grid side {} not divisible by pool kernel {}",
                self.grid_side, self.pool_kernel
            )));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::config(format!(
                "embed dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.vocab_size < 4 {
            return Err(Error::config("vocab must include the special tokens"));
        }
        if self.max_text_len < 2 {
            return Err(Error::config("max_text_len must be at least 2"));
        }
        if self.temperature_init <= 0.0 {
            return Err(Error::config("temperature_init must be positive"));
        }
        if self.lambda_cap < 0.0 {
            return Err(Error::config("lambda_cap must be non-negative"));
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return Err(Error::config("need at least one encoder and decoder layer"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ModelConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("model config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Tokens per pooled stream.
    pub fn pooled_tokens(&self) -> usize {
        let side = self.grid_side / self.pool_kernel;
        side * side
    }

    /// Length of the fused sequence entering the decoder.
    pub fn fused_len(&self) -> usize {
        let streams = if self.use_regional_stream { 3 } else { 2 };
        streams * self.pooled_tokens()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_validate() {
        let cfg = ModelConfig::desk(160);
        cfg.validate().unwrap();
        assert_eq!(cfg.grid_side, 12);
        assert_eq!(cfg.pooled_tokens(), 16);
        assert_eq!(cfg.fused_len(), 48);
    }

    #[test]
    fn paper_scale_geometry() {
        // 768px images, 48^2 tokens, pooling to 16^2, 3 streams of 256.
        let mut cfg = ModelConfig::desk(160);
        cfg.image_side = 768;
        cfg.patch_size = 16;
        cfg.grid_side = 48;
        cfg.window = 11;
        cfg.validate().unwrap();
        assert_eq!(cfg.grid_side * cfg.grid_side, 2304);
        assert_eq!(cfg.pooled_tokens(), 256);
        assert_eq!(cfg.fused_len(), 768);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ModelConfig::desk(160);
        cfg.window = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk(160);
        cfg.num_heads = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk(160);
        cfg.pool_kernel = 5;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::desk(160);
        cfg.grid_side = 13;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_roundtrip_uses_field_names() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.toml");
        let cfg = ModelConfig::desk(160);
        cfg.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for key in [
            "image_side",
            "patch_size",
            "grid_side",
            "embed_dim",
            "num_heads",
            "encoder_layers",
            "decoder_layers",
            "window",
            "pool_kernel",
            "vocab_size",
            "max_text_len",
            "lambda_cap",
            "temperature_init",
            "temperature_learnable",
        ] {
            assert!(text.contains(key), "missing key {key}");
        }
        assert_eq!(ModelConfig::load(&path).unwrap(), cfg);
    }
}
