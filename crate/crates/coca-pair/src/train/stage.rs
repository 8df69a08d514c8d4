//! The three-stage training scheme.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{sample_mixed_batch, Corpus};
use super::state::TrainState;
use super::step::{compute_batch, prefix_predicate, LossWeights};
use crate::model::clamp_temperature;
use crate::tensor::Element;
use crate::{Error, Result};

/// Desk-scale learning rates per stage (the paper-scale rates are 2e-5 for
/// stages 1 and 3 and 1e-4 for stage 2; these keep the same 5x ratio).
pub const DESK_LR_STAGE13: f64 = 3e-4;
pub const DESK_LR_STAGE2: f64 = 1.5e-3;

/// Configuration of one training stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub stage: u8,
    pub lr: f64,
    pub iterations: u64,
    pub batch_size: usize,
    /// Sub-dataset mixing ratios (must sum to 1).
    pub ratios: [f64; 4],
    pub seed: u64,
    /// Parameter-name prefixes that train in this stage.
    pub trainable: Vec<String>,
    /// 1.0 normally; 0.0 switches the contrastive term off (ablation).
    pub contrastive_weight: f64,
    pub log_every: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig::stage_defaults(1)
    }
}

impl StageConfig {
    /// Desk-scale defaults for a stage: 2k/1k/3k iterations at batch 16,
    /// stage 1 on sub-dataset 1 only, stages 2-3 at 0.2:0.25:0.25:0.3.
    pub fn stage_defaults(stage: u8) -> Self {
        let (lr, iterations, ratios, trainable): (f64, u64, [f64; 4], Vec<&str>) = match stage {
            1 => (
                DESK_LR_STAGE13,
                2000,
                [1.0, 0.0, 0.0, 0.0],
                vec!["img.", "txt.", "dec.", "con."],
            ),
            2 => (
                DESK_LR_STAGE2,
                1000,
                [0.2, 0.25, 0.25, 0.3],
                vec!["reg.", "stream."],
            ),
            3 => (
                DESK_LR_STAGE13,
                3000,
                [0.2, 0.25, 0.25, 0.3],
                vec!["reg.", "dec.", "con."],
            ),
            other => panic!("stage {other} out of range 1..=3"),
        };
        StageConfig {
            stage,
            lr,
            iterations,
            batch_size: 16,
            ratios,
            seed: 0,
            trainable: trainable.into_iter().map(String::from).collect(),
            contrastive_weight: 1.0,
            log_every: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.stage) {
            return Err(Error::config(format!("stage {} out of range", self.stage)));
        }
        if self.lr <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config("batch size must be at least 2"));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("ratios sum to {sum}, expected 1")));
        }
        if self.trainable.is_empty() {
            return Err(Error::config("trainable set must be non-empty"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: StageConfig =
            toml::from_str(&text).map_err(|e| Error::config(format!("stage config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("stage config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// One logged loss row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub iteration: u64,
    pub stage: u8,
    pub con: f64,
    pub cap: f64,
    pub total: f64,
}

/// Append loss rows to a metrics CSV (header written when the file is new).
pub fn append_metrics_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    use std::io::Write;
    let new = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if new {
        writeln!(f, "iteration,stage,l_con,l_cap,total")?;
    }
    for r in rows {
        writeln!(f, "{},{},{},{},{}", r.iteration, r.stage, r.con, r.cap, r.total)?;
    }
    Ok(())
}

/// Run one stage of training.
///
/// Only parameters matching the stage's trainable prefixes are updated;
/// everything else stays bit-identical. On a non-finite loss the last
/// finite state is checkpointed (when `out_dir` is given) and the run
/// aborts. A checkpoint is written at the end of the stage.
pub fn run_stage<E: Element>(
    cfg: &StageConfig,
    state: &mut TrainState<E>,
    corpus: &Corpus,
    out_dir: Option<&Path>,
) -> Result<()> {
    cfg.validate()?;
    state.stage = cfg.stage;
    state.optimizer.config.lr = cfg.lr;
    if cfg.iterations > 0 {
        state.reseed_sampler(cfg.seed);
    }
    let weights = LossWeights {
        lambda_cap: state.model.config.lambda_cap,
        contrastive_weight: cfg.contrastive_weight,
    };
    let predicate = prefix_predicate(
        cfg.trainable.clone(),
        state.model.config.temperature_learnable,
    );

    let mut pending: Vec<LossRow> = Vec::new();
    for _ in 0..cfg.iterations {
        let batch = sample_mixed_batch(corpus, cfg.ratios, &mut state.rng, cfg.batch_size)?;
        let out = compute_batch(
            &state.model.config,
            &state.model.regional_mask,
            &state.model.params,
            &batch,
            weights,
            Some(&predicate),
        )?;
        if !out.total.is_finite() {
            let checkpoint = match out_dir {
                Some(dir) => {
                    let path = dir.join(format!("stage{}.aborted.ckpt", cfg.stage));
                    state.save(&path)?;
                    Some(path.display().to_string())
                }
                None => None,
            };
            return Err(Error::NonFiniteLoss {
                iteration: state.iteration,
                checkpoint,
            });
        }
        state.optimizer.step(&mut state.model.params, &out.grads)?;
        clamp_temperature(&mut state.model.params);
        state.iteration += 1;
        if state.iteration % cfg.log_every == 0 {
            let row = LossRow {
                iteration: state.iteration,
                stage: cfg.stage,
                con: out.con,
                cap: out.cap,
                total: out.total,
            };
            state.loss_history.push(row);
            pending.push(row);
        }
    }

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        append_metrics_csv(&dir.join("metrics.csv"), &pending)?;
        state.save(&dir.join(format!("stage{}.ckpt", cfg.stage)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_study_pair, GenConfig};
    use crate::model::{ModelConfig, Vocabulary};

    fn tiny_setup() -> (TrainState<f64>, Corpus) {
        let vocab = Vocabulary::default_vocab();
        let mut mc = ModelConfig::tiny(vocab.len());
        mc.image_side = 32;
        mc.patch_size = 8;
        mc.grid_side = 4;
        mc.max_text_len = 48;
        let state = TrainState::new(mc, 3, Default::default()).unwrap();
        let gc = GenConfig {
            image_side: 32,
            ..Default::default()
        };
        let pairs: Vec<_> = (0..6)
            .map(|i| generate_study_pair(2000 + i, &gc).unwrap())
            .collect();
        let corpus = Corpus::from_study_pairs(&pairs, &vocab).unwrap();
        (state, corpus)
    }

    #[test]
    fn zero_iterations_only_marks_the_stage() {
        let (mut state, corpus) = tiny_setup();
        let before: Vec<(String, Vec<f64>)> = state
            .model
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t.data().to_vec()))
            .collect();
        let mut cfg = StageConfig::stage_defaults(2);
        cfg.iterations = 0;
        cfg.batch_size = 2;
        run_stage(&mut cfg.clone(), &mut state, &corpus, None).unwrap();
        assert_eq!(state.stage, 2);
        assert_eq!(state.iteration, 0);
        for (name, data) in before {
            assert_eq!(state.model.params.get(&name).unwrap().data(), &data[..]);
        }
    }

    #[test]
    fn frozen_params_stay_bit_identical() {
        let (mut state, corpus) = tiny_setup();
        let frozen_before: Vec<(String, Vec<u64>)> = state
            .model
            .params
            .iter()
            .filter(|(n, _)| !n.starts_with("reg.") && !n.starts_with("stream."))
            .map(|(n, t)| (n.clone(), t.data().iter().map(|v| v.to_bits()).collect()))
            .collect();
        let mut cfg = StageConfig::stage_defaults(2);
        cfg.iterations = 3;
        cfg.batch_size = 4;
        cfg.log_every = 1;
        run_stage(&cfg, &mut state, &corpus, None).unwrap();
        assert_eq!(state.iteration, 3);
        for (name, bits) in frozen_before {
            let now: Vec<u64> = state
                .model
                .params
                .get(&name)
                .unwrap()
                .data()
                .iter()
                .map(|v| v.to_bits())
                .collect();
            assert_eq!(now, bits, "{name} changed during stage 2");
        }
        // Regional weights did move.
        let moved = state
            .model
            .params
            .iter()
            .filter(|(n, _)| n.starts_with("reg."))
            .any(|(_, t)| t.data().iter().any(|v| *v != 0.0));
        assert!(moved);
        assert_eq!(state.loss_history.len(), 3);
    }

    #[test]
    fn stage_defaults_follow_the_schedule() {
        let s1 = StageConfig::stage_defaults(1);
        assert_eq!(s1.ratios, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s1.iterations, 2000);
        let s2 = StageConfig::stage_defaults(2);
        assert_eq!(s2.ratios, [0.2, 0.25, 0.25, 0.3]);
        assert!(s2.trainable.iter().any(|p| p == "reg."));
        assert!((s2.lr / s1.lr - 5.0).abs() < 1e-9);
        let s3 = StageConfig::stage_defaults(3);
        assert_eq!(s3.iterations, 3000);
        assert!(s3.trainable.iter().any(|p| p == "dec."));
    }
}
