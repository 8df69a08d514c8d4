//! Evaluation protocols: prompt-based progression classification, swap
//! consistency, and text-based detection with IoU scoring.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use super::metrics::box_iou;
use crate::corpus::{annotation_for, StudyPair, StudyRecord};
use crate::model::{CocaPairModel, DecodeMode, Vocabulary};
use crate::report::{
    parse_annotation_text, BoxCoords, Condition, Organ, ProgressionLabel, SceneAnnotation,
};
use crate::tensor::Element;
use crate::{Error, Result};

/// One gold fact about an evaluation pair.
#[derive(Debug, Clone)]
pub struct GoldLesion {
    pub condition: Condition,
    pub organ: Organ,
    pub label: ProgressionLabel,
    pub box_current: BoxCoords,
    pub box_prior: BoxCoords,
    /// Largest lesion extent across the two sides.
    pub max_sigma: f64,
}

/// A held-out pair with its gold annotations.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub study_id: String,
    pub current: Vec<f32>,
    pub prior: Vec<f32>,
    pub golds: Vec<GoldLesion>,
}

impl EvalPair {
    pub fn from_study_pair(p: &StudyPair, epsilon: f64) -> Result<Self> {
        let golds = golds_from_pairs(&p.lesion_pairs, epsilon)?;
        Ok(EvalPair {
            study_id: p.study_id.clone(),
            current: p.current_image.clone(),
            prior: p.prior_image.clone(),
            golds,
        })
    }

    pub fn from_record(rec: &StudyRecord, corpus_dir: &Path, epsilon: f64) -> Result<Self> {
        let img = |tag: &str| -> Result<Vec<f32>> {
            let path = corpus_dir
                .join("images")
                .join(format!("{}.{tag}.f32", rec.study_id));
            Ok(crate::corpus::pgm::read_f32(&path)?.1)
        };
        Ok(EvalPair {
            study_id: rec.study_id.clone(),
            current: img("current")?,
            prior: img("prior")?,
            golds: golds_from_pairs(&rec.lesion_pairs, epsilon)?,
        })
    }
}

fn golds_from_pairs(
    pairs: &[crate::corpus::LesionPair],
    epsilon: f64,
) -> Result<Vec<GoldLesion>> {
    pairs
        .iter()
        .map(|lp| {
            let ann = annotation_for(lp, epsilon)?;
            Ok(GoldLesion {
                condition: ann.condition,
                organ: ann.organ,
                label: ann.progression,
                box_current: ann.box_current,
                box_prior: ann.box_prior,
                max_sigma: lp.max_sigma(),
            })
        })
        .collect()
}

/// Token ids of the three class words.
pub fn class_token_ids(vocab: &Vocabulary) -> Result<[u32; 3]> {
    Ok([
        vocab.id("worsened")?,
        vocab.id("unchanged")?,
        vocab.id("improved")?,
    ])
}

/// Classify the progression of `condition` between `prior` and `current`
/// by constrained decoding of the prompt "[condition] is".
pub fn classify_progression<E: Element>(
    model: &CocaPairModel<E>,
    vocab: &Vocabulary,
    current: &[f32],
    prior: &[f32],
    condition: Condition,
) -> Result<ProgressionLabel> {
    let prompt = vocab.encode(&format!("{} is", condition.as_str()))?;
    let choices = class_token_ids(vocab)?;
    let out = model.generate_text(
        current,
        prior,
        &prompt,
        prompt.len() + 1,
        DecodeMode::Constrained(&choices),
    )?;
    let picked = *out.last().expect("constrained decode returns a token");
    Ok(if picked == choices[0] {
        ProgressionLabel::Worsened
    } else if picked == choices[1] {
        ProgressionLabel::Unchanged
    } else {
        ProgressionLabel::Improved
    })
}

/// Per-lesion predictions and golds over an evaluation set.
pub fn classify_all<E: Element>(
    model: &CocaPairModel<E>,
    vocab: &Vocabulary,
    pairs: &[EvalPair],
) -> Result<(Vec<ProgressionLabel>, Vec<ProgressionLabel>)> {
    let results: Vec<Vec<(ProgressionLabel, ProgressionLabel)>> = pairs
        .par_iter()
        .map(|p| -> Result<Vec<(ProgressionLabel, ProgressionLabel)>> {
            p.golds
                .iter()
                .map(|g| {
                    let pred =
                        classify_progression(model, vocab, &p.current, &p.prior, g.condition)?;
                    Ok((pred, g.label))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for row in results {
        for (p, g) in row {
            preds.push(p);
            golds.push(g);
        }
    }
    Ok((preds, golds))
}

/// Fraction of (pair, condition) queries where the prediction on the
/// swapped pair equals the flipped prediction on the original pair.
pub fn swap_consistency_rate<E: Element>(
    model: &CocaPairModel<E>,
    vocab: &Vocabulary,
    pairs: &[EvalPair],
) -> Result<f64> {
    let outcomes: Vec<Vec<bool>> = pairs
        .par_iter()
        .map(|p| -> Result<Vec<bool>> {
            p.golds
                .iter()
                .map(|g| {
                    let fwd =
                        classify_progression(model, vocab, &p.current, &p.prior, g.condition)?;
                    let bwd =
                        classify_progression(model, vocab, &p.prior, &p.current, g.condition)?;
                    Ok(bwd == fwd.flip())
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<bool> = outcomes.into_iter().flatten().collect();
    if flat.is_empty() {
        return Err(Error::Eval("no evaluation queries".into()));
    }
    Ok(flat.iter().filter(|&&b| b).count() as f64 / flat.len() as f64)
}

/// One matched detection.
#[derive(Debug, Clone)]
pub struct MatchedDetection {
    pub condition: Condition,
    pub organ: Organ,
    pub iou_current: f64,
    pub iou_prior: f64,
    pub gold_sigma: f64,
}

/// Text-based detection results over an evaluation set.
#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub matched: Vec<MatchedDetection>,
    /// Gold annotations with no parseable matching prediction score 0.
    pub total_golds: usize,
    /// Sentence-level parse success over all generated text.
    pub parse_success_rate: f64,
    pub matched_rate: f64,
}

impl DetectionReport {
    /// Mean IoU (average of current/prior sides) over matched detections
    /// with gold extent at least `min_sigma`.
    pub fn mean_iou_for_sigma_at_least(&self, min_sigma: f64) -> Option<f64> {
        let subset: Vec<f64> = self
            .matched
            .iter()
            .filter(|m| m.gold_sigma >= min_sigma)
            .map(|m| 0.5 * (m.iou_current + m.iou_prior))
            .collect();
        if subset.is_empty() {
            None
        } else {
            Some(subset.iter().sum::<f64>() / subset.len() as f64)
        }
    }

    /// Per-organ mean (current IoU, prior IoU, count) over matched rows.
    pub fn per_organ(&self) -> BTreeMap<Organ, (f64, f64, usize)> {
        let mut acc: BTreeMap<Organ, (f64, f64, usize)> = BTreeMap::new();
        for m in &self.matched {
            let e = acc.entry(m.organ).or_insert((0.0, 0.0, 0));
            e.0 += m.iou_current;
            e.1 += m.iou_prior;
            e.2 += 1;
        }
        for (_, e) in acc.iter_mut() {
            if e.2 > 0 {
                e.0 /= e.2 as f64;
                e.1 /= e.2 as f64;
            }
        }
        acc
    }
}

/// Greedy-decode annotation text for every pair, parse it, match
/// predictions to golds on (condition, organ), and score IoU per side.
pub fn detect_and_score<E: Element>(
    model: &CocaPairModel<E>,
    vocab: &Vocabulary,
    pairs: &[EvalPair],
) -> Result<DetectionReport> {
    let per_pair: Vec<(Vec<SceneAnnotation>, usize, usize, Vec<MatchedDetection>, usize)> = pairs
        .par_iter()
        .map(|p| -> Result<_> {
            let ids = model.generate_text(
                &p.current,
                &p.prior,
                &[],
                model.config.max_text_len,
                DecodeMode::Greedy,
            )?;
            let text = vocab.decode(&ids)?;
            let sentences = crate::report::split_sentences(&text);
            let (parsed, _failed) = parse_annotation_text(&text);
            let total_sentences = sentences.len().max(1);
            let ok_sentences = parsed.len();

            let mut matched = Vec::new();
            let mut misses = 0usize;
            for g in &p.golds {
                match parsed
                    .iter()
                    .find(|a| a.condition == g.condition && a.organ == g.organ)
                {
                    Some(a) => matched.push(MatchedDetection {
                        condition: g.condition,
                        organ: g.organ,
                        iou_current: box_iou(&a.box_current, &g.box_current)?,
                        iou_prior: box_iou(&a.box_prior, &g.box_prior)?,
                        gold_sigma: g.max_sigma,
                    }),
                    None => misses += 1,
                }
            }
            Ok((parsed, ok_sentences, total_sentences, matched, misses))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut matched = Vec::new();
    let mut ok_sentences = 0usize;
    let mut total_sentences = 0usize;
    let mut total_golds = 0usize;
    let mut misses = 0usize;
    for (_, ok, total, m, miss) in per_pair {
        ok_sentences += ok;
        total_sentences += total;
        total_golds += m.len() + miss;
        misses += miss;
        matched.extend(m);
    }
    let matched_rate = if total_golds == 0 {
        0.0
    } else {
        matched.len() as f64 / total_golds as f64
    };
    let _ = misses;
    Ok(DetectionReport {
        matched,
        total_golds,
        parse_success_rate: ok_sentences as f64 / total_sentences.max(1) as f64,
        matched_rate,
    })
}

/// Write evaluation metrics as `metric,key,value` CSV rows.
pub fn write_eval_csv(path: &Path, rows: &[(String, String, f64)]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "metric,key,value")?;
    for (metric, key, value) in rows {
        writeln!(f, "{metric},{key},{value}")?;
    }
    Ok(())
}
