//! Contrastive captioner for paired grayscale images with a regional
//! cross-attention module for temporal reasoning.
//!
//! The crate is organized around six subsystems:
//!
//! - [`tensor`] — a minimal dense-tensor engine with reverse-mode
//!   differentiation, AdamW, finite-difference gradient checking, and a
//!   binary checkpoint format.
//! - [`model`] — the network itself: shared image encoder, unimodal text
//!   encoder, regional cross-attention fusion, multimodal decoder, the
//!   contrastive + captioning losses, and greedy/constrained decoding.
//! - [`report`] — a deterministic report-structuring pipeline over a
//!   controlled report grammar: sectioning, comparison extraction,
//!   comparison reversal, cleaning, and scene-annotation (de)serialization.
//! - [`corpus`] — a synthetic paired-image generator with ground-truth
//!   scene annotations, used to build the four training sub-datasets.
//! - [`train`] — the three-stage training harness with per-stage
//!   trainability, mixed-batch sampling, and resumable train state.
//! - [`eval`] — progression classification, macro-accuracy, swap
//!   consistency, text-based box detection with IoU, and token-level F1.
//!
//! See `examples/` for one runnable program per capability and the
//! `coca-pair` binary for the subcommand CLI.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod report;
pub mod tensor;
pub mod train;

pub mod cli;

pub use error::Error;

/// Crate result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Configure the global worker pool from the `COCA_PAIR_THREADS` env var.
///
/// Callers that never touch this get rayon's default pool. Returns the
/// effective thread count. Calling it twice is harmless.
pub fn configure_threads() -> usize {
    if let Ok(v) = std::env::var("COCA_PAIR_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                // Ignore the error: the pool may already have been built.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
    rayon::current_num_threads()
}
