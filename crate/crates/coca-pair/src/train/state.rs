//! Resumable training state.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stage::LossRow;
use crate::model::{CocaPairModel, ModelConfig};
use crate::tensor::{load_tensors, save_tensors, AdamW, AdamWConfig, Element, TensorMap};
use crate::{Error, Result};

/// Everything needed to stop and resume training bit-compatibly: model
/// parameters, optimizer moments, the batch-sampling RNG, counters, and
/// the logged loss history.
pub struct TrainState<E: Element> {
    pub model: CocaPairModel<E>,
    pub optimizer: AdamW<E>,
    pub iteration: u64,
    pub stage: u8,
    pub rng: ChaCha8Rng,
    pub loss_history: Vec<LossRow>,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: String,
    word_pos: String,
    stream: u64,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    schema: String,
    iteration: u64,
    stage: u8,
    optim_step: u64,
    optim: AdamWMeta,
    rng: RngState,
    loss_history: Vec<LossRow>,
    model_config: ModelConfig,
}

#[derive(Serialize, Deserialize)]
struct AdamWMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl<E: Element> TrainState<E> {
    pub fn new(config: ModelConfig, model_seed: u64, optim: AdamWConfig) -> Result<Self> {
        Ok(TrainState {
            model: CocaPairModel::new(config, model_seed)?,
            optimizer: AdamW::new(optim),
            iteration: 0,
            stage: 0,
            rng: ChaCha8Rng::seed_from_u64(model_seed),
            loss_history: Vec::new(),
        })
    }

    /// Reset the batch sampler stream (used at the start of each stage).
    pub fn reseed_sampler(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Serialize the full state into one checkpoint file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: TensorMap<E> = self.model.params.clone();
        let (optim_step, moments) = self.optimizer.export_state();
        for (name, t) in moments {
            tensors.insert(name, t);
        }
        let c = self.optimizer.config;
        let meta = StateMeta {
            schema: "train-state".to_string(),
            iteration: self.iteration,
            stage: self.stage,
            optim_step,
            optim: AdamWMeta {
                lr: c.lr,
                beta1: c.beta1,
                beta2: c.beta2,
                eps: c.eps,
                weight_decay: c.weight_decay,
            },
            rng: RngState {
                seed: hex_encode(&self.rng.get_seed()),
                word_pos: self.rng.get_word_pos().to_string(),
                stream: self.rng.get_stream(),
            },
            loss_history: self.loss_history.clone(),
            model_config: self.model.config.clone(),
        };
        save_tensors(path, &tensors, serde_json::to_value(&meta)?)
    }

    /// Load a checkpoint written by [`TrainState::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, meta_value) = load_tensors::<E>(path)?;
        let meta: StateMeta = serde_json::from_value(meta_value)
            .map_err(|e| Error::Checkpoint(format!("bad state metadata: {e}")))?;
        if meta.schema != "train-state" {
            return Err(Error::Checkpoint(format!(
                "unexpected schema '{}'",
                meta.schema
            )));
        }
        let mut params = TensorMap::new();
        let mut moments = TensorMap::new();
        for (name, t) in tensors {
            if name.starts_with("optim.") {
                moments.insert(name, t);
            } else {
                params.insert(name, t);
            }
        }
        let model = CocaPairModel::from_parts(meta.model_config.clone(), params)?;
        let mut optimizer = AdamW::new(AdamWConfig {
            lr: meta.optim.lr,
            beta1: meta.optim.beta1,
            beta2: meta.optim.beta2,
            eps: meta.optim.eps,
            weight_decay: meta.optim.weight_decay,
        });
        optimizer.import_state(meta.optim_step, &moments)?;

        let seed_bytes = hex_decode(&meta.rng.seed)
            .ok_or_else(|| Error::Checkpoint("bad rng seed encoding".into()))?;
        let seed: [u8; 32] = seed_bytes
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(meta.rng.stream);
        let word_pos: u128 = meta
            .rng
            .word_pos
            .parse()
            .map_err(|_| Error::Checkpoint("bad rng word position".into()))?;
        rng.set_word_pos(word_pos);

        Ok(TrainState {
            model,
            optimizer,
            iteration: meta.iteration,
            stage: meta.stage,
            rng,
            loss_history: meta.loss_history,
        })
    }
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len() / 2)
        .map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn state_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let mut state =
            TrainState::<f64>::new(ModelConfig::tiny(32), 7, AdamWConfig::default()).unwrap();
        // Advance the rng so word_pos is non-trivial.
        let _: u64 = state.rng.gen();
        state.iteration = 123;
        state.stage = 2;
        state.loss_history.push(LossRow {
            iteration: 50,
            stage: 1,
            con: 1.25,
            cap: 3.5,
            total: 8.25,
        });
        state.save(&path).unwrap();
        let mut loaded = TrainState::<f64>::load(&path).unwrap();
        assert_eq!(loaded.iteration, 123);
        assert_eq!(loaded.stage, 2);
        assert_eq!(loaded.loss_history, state.loss_history);
        for (name, t) in &state.model.params {
            let u = loaded.model.params.get(name).unwrap();
            for (a, b) in t.data().iter().zip(u.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name}");
            }
        }
        // RNG streams continue identically.
        let a: [u64; 4] = std::array::from_fn(|_| state.rng.gen());
        let b: [u64; 4] = std::array::from_fn(|_| loaded.rng.gen());
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_state_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        let state =
            TrainState::<f32>::new(ModelConfig::tiny(32), 1, AdamWConfig::default()).unwrap();
        state.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        let err = match TrainState::<f32>::load(&path) {
            Err(e) => e,
            Ok(_) => panic!("truncated checkpoint loaded"),
        };
        assert!(matches!(err, Error::Checkpoint(_)));
    }
}
