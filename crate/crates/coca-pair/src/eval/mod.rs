//! Evaluation: progression classification, macro-accuracy, swap
//! consistency, text-based detection with IoU, and token-level F1.

pub mod metrics;
pub mod protocol;

pub use metrics::{box_iou, macro_accuracy, token_f1, MacroAccuracy, TokenF1};
pub use protocol::{
    class_token_ids, classify_all, classify_progression, detect_and_score, swap_consistency_rate,
    write_eval_csv, DetectionReport, EvalPair, GoldLesion, MatchedDetection,
};
