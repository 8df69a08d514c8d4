//! End-to-end gradient check of the combined loss on a tiny model.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::PairSample;
use super::step::{batch_loss_value, full_loss_grads, LossWeights};
use crate::model::{CocaPairModel, ModelConfig};
use crate::tensor::{finite_diff_gradcheck, GradCheckReport};
use crate::Result;

/// Build a small synthetic batch (random images, random token sequences,
/// one identity pair) for gradient checking.
pub fn synthetic_batch(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<PairSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pixels = cfg.image_side * cfg.image_side;
            let current: Vec<f32> = (0..pixels).map(|_| rng.gen_range(0.0..1.0)).collect();
            let prior: Vec<f32> = (0..pixels).map(|_| rng.gen_range(0.0..1.0)).collect();
            let len = rng.gen_range(2..=cfg.max_text_len.min(6));
            let text_ids: Vec<u32> = (0..len)
                .map(|_| rng.gen_range(4..cfg.vocab_size as u32))
                .collect();
            PairSample {
                study_id: format!("synth{i}"),
                current: Arc::new(current),
                prior: if i == 0 { None } else { Some(Arc::new(prior)) },
                text_ids,
                subdataset: if i == 0 { 1 } else { 3 },
            }
        })
        .collect()
}

/// Check analytic gradients of the full combined loss against central
/// finite differences on the tiny config (64-bit).
///
/// `samples_per_tensor` caps how many coordinates are probed per parameter.
pub fn gradcheck_full_loss(seed: u64, samples_per_tensor: usize) -> Result<GradCheckReport> {
    let cfg = ModelConfig::tiny(32);
    gradcheck_with_config(cfg, 4, seed, samples_per_tensor)
}

/// Same check with an explicit config and batch size.
pub fn gradcheck_with_config(
    cfg: ModelConfig,
    batch_size: usize,
    seed: u64,
    samples_per_tensor: usize,
) -> Result<GradCheckReport> {
    let model = CocaPairModel::<f64>::new(cfg.clone(), seed)?;
    let batch = synthetic_batch(&cfg, batch_size, seed ^ 0x5eed);
    let weights = LossWeights {
        lambda_cap: cfg.lambda_cap,
        contrastive_weight: 1.0,
    };
    let analytic = full_loss_grads(&cfg, &model.regional_mask, &model.params, &batch, weights)?;
    let mask = model.regional_mask;
    finite_diff_gradcheck(
        &model.params,
        &analytic.grads,
        |params| batch_loss_value(&cfg, &mask, params, &batch, weights),
        samples_per_tensor,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_full_loss_gradients_match() {
        let report = gradcheck_full_loss(0, 2).unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "max rel error {} at {}[{}]",
            report.max_rel_error,
            report.worst_param,
            report.worst_coord
        );
    }

    #[test]
    fn corrupted_full_gradient_is_caught() {
        let cfg = ModelConfig::tiny(32);
        let model = CocaPairModel::<f64>::new(cfg.clone(), 1).unwrap();
        let batch = synthetic_batch(&cfg, 3, 2);
        let weights = LossWeights {
            lambda_cap: cfg.lambda_cap,
            contrastive_weight: 1.0,
        };
        let mut analytic =
            full_loss_grads(&cfg, &model.regional_mask, &model.params, &batch, weights).unwrap();
        // Corrupt one gradient coordinate that the sampler will visit.
        let g = analytic.grads.get_mut("con.img_proj").unwrap();
        for v in g.iter_mut() {
            *v += 0.05;
        }
        let mask = model.regional_mask;
        let report = finite_diff_gradcheck(
            &model.params,
            &analytic.grads,
            |params| batch_loss_value(&cfg, &mask, params, &batch, weights),
            2,
            1,
        )
        .unwrap();
        assert!(report.max_rel_error > 1e-2, "{report:?}");
    }
}
