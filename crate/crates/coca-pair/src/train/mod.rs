//! Three-stage training harness.

pub mod data;
pub mod gradcheck;
pub mod stage;
pub mod state;
pub mod step;

pub use data::{sample_mixed_batch, Corpus, PairSample};
pub use gradcheck::{gradcheck_full_loss, gradcheck_with_config, synthetic_batch};
pub use stage::{
    append_metrics_csv, run_stage, LossRow, StageConfig, DESK_LR_STAGE13, DESK_LR_STAGE2,
};
pub use state::TrainState;
pub use step::{
    batch_loss_value, compute_batch, full_loss_grads, prefix_predicate, LossWeights, StepOutcome,
};
