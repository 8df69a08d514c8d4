//! Quick throughput probe: time desk-scale training steps.

use coca_pair::corpus::{generate_study_pair, GenConfig};
use coca_pair::model::{ModelConfig, Vocabulary};
use coca_pair::tensor::AdamWConfig;
use coca_pair::train::{run_stage, Corpus, StageConfig, TrainState};

fn main() {
    coca_pair::configure_threads();
    let vocab = Vocabulary::default_vocab();
    let gc = GenConfig::default();
    let pairs: Vec<_> = (0..64)
        .map(|i| generate_study_pair(i, &gc).unwrap())
        .collect();
    let corpus = Corpus::from_study_pairs(&pairs, &vocab).unwrap();
    let mut state =
        TrainState::<f32>::new(ModelConfig::desk(vocab.len()), 7, AdamWConfig::default()).unwrap();

    let mut cfg = StageConfig::stage_defaults(3);
    cfg.iterations = 30;
    cfg.log_every = 10;
    let t0 = std::time::Instant::now();
    run_stage(&cfg, &mut state, &corpus, None).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "stage-3 style steps: {:.3} s/step ({} steps in {:.1} s)",
        dt / 30.0,
        30,
        dt
    );

    let mut cfg1 = StageConfig::stage_defaults(1);
    cfg1.iterations = 30;
    let t0 = std::time::Instant::now();
    run_stage(&cfg1, &mut state, &corpus, None).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!("stage-1 style steps: {:.3} s/step", dt / 30.0);
}
