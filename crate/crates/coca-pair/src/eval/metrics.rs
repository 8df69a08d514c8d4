//! Classification, box, and token-overlap metrics.

use std::collections::HashMap;

use crate::model::Vocabulary;
use crate::report::{BoxCoords, ProgressionLabel};
use crate::{Error, Result};

/// Per-class recalls and their unweighted mean.
#[derive(Debug, Clone)]
pub struct MacroAccuracy {
    pub per_class: Vec<(ProgressionLabel, f64)>,
    pub macro_accuracy: f64,
}

/// Macro-accuracy: mean over the three classes of per-class recall.
pub fn macro_accuracy(
    preds: &[ProgressionLabel],
    golds: &[ProgressionLabel],
) -> Result<MacroAccuracy> {
    if preds.len() != golds.len() {
        return Err(Error::Eval(format!(
            "length mismatch: {} predictions vs {} golds",
            preds.len(),
            golds.len()
        )));
    }
    let mut per_class = Vec::with_capacity(3);
    let mut sum = 0.0;
    for class in ProgressionLabel::ALL {
        let total = golds.iter().filter(|&&g| g == class).count();
        if total == 0 {
            return Err(Error::Eval(format!(
                "class {:?} absent from the gold labels",
                class
            )));
        }
        let hit = preds
            .iter()
            .zip(golds)
            .filter(|(p, g)| **g == class && **p == class)
            .count();
        let recall = hit as f64 / total as f64;
        per_class.push((class, recall));
        sum += recall;
    }
    Ok(MacroAccuracy {
        per_class,
        macro_accuracy: sum / 3.0,
    })
}

/// Intersection-over-union of two normalized boxes.
pub fn box_iou(a: &BoxCoords, b: &BoxCoords) -> Result<f64> {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return Err(Error::Eval("degenerate box".into()));
    }
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

/// Multiset token-overlap precision/recall/F1.
#[derive(Debug, Clone, Copy)]
pub struct TokenF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Token-level F1 between two texts under the model vocabulary.
pub fn token_f1(pred: &str, gold: &str, vocab: &Vocabulary) -> Result<TokenF1> {
    let gold_ids = vocab.encode(gold)?;
    if gold_ids.is_empty() {
        return Err(Error::Eval("empty gold text".into()));
    }
    let pred_ids = vocab.encode(pred)?;
    let mut counts: HashMap<u32, isize> = HashMap::new();
    for &t in &gold_ids {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for &t in &pred_ids {
        let c = counts.entry(t).or_insert(0);
        if *c > 0 {
            overlap += 1;
            *c -= 1;
        }
    }
    let precision = if pred_ids.is_empty() {
        0.0
    } else {
        overlap as f64 / pred_ids.len() as f64
    };
    let recall = overlap as f64 / gold_ids.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(TokenF1 {
        precision,
        recall,
        f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProgressionLabel::{Improved, Unchanged, Worsened};

    #[test]
    fn perfect_predictions_score_100() {
        let golds = vec![Worsened, Unchanged, Improved, Worsened];
        let m = macro_accuracy(&golds, &golds).unwrap();
        assert_eq!(m.macro_accuracy, 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_set_scores_one_third() {
        let golds = vec![Worsened, Unchanged, Improved];
        let preds = vec![Unchanged; 3];
        let m = macro_accuracy(&preds, &golds).unwrap();
        assert!((m.macro_accuracy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_of_three_classes_perfect() {
        let golds = vec![Worsened, Unchanged, Improved];
        let preds = vec![Worsened, Unchanged, Worsened];
        let m = macro_accuracy(&preds, &golds).unwrap();
        assert!((m.macro_accuracy - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn missing_class_is_an_error() {
        let golds = vec![Worsened, Worsened];
        let preds = vec![Worsened, Worsened];
        assert!(macro_accuracy(&preds, &golds).is_err());
    }

    #[test]
    fn macro_accuracy_invariant_under_consistent_relabeling() {
        let golds = vec![Worsened, Unchanged, Improved, Worsened, Improved, Unchanged];
        let preds = vec![Worsened, Improved, Improved, Unchanged, Worsened, Unchanged];
        let relabel = |l: ProgressionLabel| l.flip(); // a permutation of the classes
        let a = macro_accuracy(&preds, &golds).unwrap().macro_accuracy;
        let b = macro_accuracy(
            &preds.iter().map(|&p| relabel(p)).collect::<Vec<_>>(),
            &golds.iter().map(|&g| relabel(g)).collect::<Vec<_>>(),
        )
        .unwrap()
        .macro_accuracy;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn iou_identical_disjoint_and_quarter_overlap() {
        let a = BoxCoords::new(0.0, 0.5, 0.0, 0.5).unwrap();
        assert_eq!(box_iou(&a, &a).unwrap(), 1.0);
        let b = BoxCoords::new(0.6, 0.9, 0.6, 0.9).unwrap();
        assert_eq!(box_iou(&a, &b).unwrap(), 0.0);
        let c = BoxCoords::new(0.25, 0.75, 0.25, 0.75).unwrap();
        let iou = box_iou(&a, &c).unwrap();
        assert!((iou - 1.0 / 7.0).abs() < 1e-12, "{iou}");
        // symmetry
        assert_eq!(iou, box_iou(&c, &a).unwrap());
    }

    #[test]
    fn token_f1_cases() {
        let v = Vocabulary::default_vocab();
        let t = token_f1("pneumonia is worsened.", "pneumonia is worsened.", &v).unwrap();
        assert_eq!(t.f1, 1.0);
        let t = token_f1("edema improving.", "pneumonia worsened.", &v).unwrap();
        assert!(t.f1 < 0.5); // only the period overlaps
        let t = token_f1("pneumonia edema", "edema consolidation", &v).unwrap();
        assert!((t.precision - 0.5).abs() < 1e-12);
        assert!((t.recall - 0.5).abs() < 1e-12);
        assert!((t.f1 - 0.5).abs() < 1e-12);
        assert!(token_f1("pneumonia", "", &v).is_err());
    }
}
