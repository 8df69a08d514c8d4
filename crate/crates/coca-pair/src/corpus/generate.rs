//! Study-pair generation and sub-dataset construction.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::atlas::organ_center;
use super::progression::{annotation_for, derive_progression_label};
use super::render::render_scene;
use super::{Lesion, LesionPair, Scene, StudyPair, StudyRecord, SubdatasetTexts};
use crate::report::grammar::{
    extent_sentence, lungs_clear_sentence, new_lesion_sentence, progression_marker_sentence,
    progression_sentence, resolved_lesion_sentence, short_trend_sentence, stable_sentence,
    status_sentence, unchanged_marker_sentence, Severity,
};
use crate::report::{
    clean_report, extract_comparisons, reverse_comparison_text, serialize_scene_annotation,
    split_sentences, ComparisonLexicon, Condition, Organ, ProgressionLabel, Record, Report,
};
use crate::{Error, Result};

/// Generator configuration (structured text file: TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub image_side: usize,
    /// Weights for drawing 1, 2, ... lesions per pair.
    pub lesion_count_weights: Vec<f64>,
    /// Sampling balance over (worsened, unchanged, improved).
    pub class_balance: [f64; 3],
    /// Fraction of worsened/improved lesions realized as new/resolved.
    pub appear_fraction: f64,
    /// Extents to draw from (normalized sigma).
    pub sigma_choices: Vec<f64>,
    pub intensity_range: (f64, f64),
    /// Severity ratio range for worsened lesions (improved mirrors it).
    pub ratio_worsened: (f64, f64),
    /// Severity ratio range for unchanged lesions (straddles 1).
    pub ratio_unchanged: (f64, f64),
    /// Relative severity margin separating the classes.
    pub epsilon: f64,
    /// Uniform jitter applied to atlas centers.
    pub center_jitter: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            image_side: 48,
            lesion_count_weights: vec![0.7, 0.3],
            class_balance: [1.0 / 3.0; 3],
            appear_fraction: 0.25,
            sigma_choices: vec![0.05, 0.06, 0.08, 0.10, 0.12],
            intensity_range: (0.35, 0.70),
            ratio_worsened: (1.6, 2.6),
            ratio_unchanged: (0.95, 1.05),
            epsilon: super::progression::DEFAULT_EPSILON,
            center_jitter: 0.02,
        }
    }
}

impl GenConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::config(format!("gen config: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::config(format!("gen config: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.lesion_count_weights.is_empty() {
            return Err(Error::config("lesion_count_weights must be non-empty"));
        }
        if self.class_balance.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config("class_balance must have positive mass"));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.ratio_worsened.0 <= 1.0 + self.epsilon {
            return Err(Error::config(
                "ratio_worsened must start above 1 + epsilon",
            ));
        }
        if self.ratio_unchanged.0 < 1.0 - self.epsilon || self.ratio_unchanged.1 > 1.0 + self.epsilon
        {
            return Err(Error::config("ratio_unchanged must stay within 1 +- epsilon"));
        }
        for &s in &self.sigma_choices {
            if !(0.03..=0.25).contains(&s) {
                return Err(Error::config(format!("sigma {s} outside [0.03, 0.25]")));
            }
        }
        Ok(())
    }
}

fn weighted_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Scale a lesion's severity by `m` (split evenly between extent and
/// intensity so both grow visibly).
fn scale_severity(lesion: &Lesion, m: f64) -> Lesion {
    let f = m.powf(1.0 / 3.0);
    Lesion {
        sigma: lesion.sigma * f,
        intensity: lesion.intensity * f,
        ..lesion.clone()
    }
}

fn sample_lesion_pair(
    rng: &mut ChaCha8Rng,
    cfg: &GenConfig,
    condition: Condition,
    organ: Organ,
) -> Result<LesionPair> {
    let (ax, ay) = organ_center(organ);
    let j = cfg.center_jitter;
    let base = Lesion {
        condition,
        organ,
        center: (
            ax + rng.gen_range(-j..=j),
            ay + rng.gen_range(-j..=j),
        ),
        sigma: cfg.sigma_choices[rng.gen_range(0..cfg.sigma_choices.len())],
        intensity: rng.gen_range(cfg.intensity_range.0..=cfg.intensity_range.1),
    };
    let label = match weighted_index(rng, &cfg.class_balance) {
        0 => ProgressionLabel::Worsened,
        1 => ProgressionLabel::Unchanged,
        _ => ProgressionLabel::Improved,
    };
    let appear = rng.gen_range(0.0..1.0) < cfg.appear_fraction;
    let pair = match label {
        ProgressionLabel::Worsened => {
            if appear {
                LesionPair {
                    prior: None,
                    current: Some(base),
                }
            } else {
                let m = rng.gen_range(cfg.ratio_worsened.0..=cfg.ratio_worsened.1);
                LesionPair {
                    prior: Some(base.clone()),
                    current: Some(scale_severity(&base, m)),
                }
            }
        }
        ProgressionLabel::Improved => {
            if appear {
                LesionPair {
                    prior: Some(base),
                    current: None,
                }
            } else {
                let m = rng.gen_range(cfg.ratio_worsened.0..=cfg.ratio_worsened.1);
                LesionPair {
                    prior: Some(scale_severity(&base, m)),
                    current: Some(base.clone()),
                }
            }
        }
        ProgressionLabel::Unchanged => {
            let m = rng.gen_range(cfg.ratio_unchanged.0..=cfg.ratio_unchanged.1);
            LesionPair {
                prior: Some(base.clone()),
                current: Some(scale_severity(&base, m)),
            }
        }
    };
    // The sampled margins guarantee the derived label matches.
    let derived =
        derive_progression_label(pair.prior.as_ref(), pair.current.as_ref(), cfg.epsilon)?;
    if derived != label {
        return Err(Error::Data(format!(
            "generator produced label {derived:?}, wanted {label:?}"
        )));
    }
    Ok(pair)
}

fn comparison_sentence(
    rng: &mut ChaCha8Rng,
    pair: &LesionPair,
    label: ProgressionLabel,
) -> String {
    let (cond, organ) = pair.key();
    match label {
        ProgressionLabel::Worsened => match (&pair.prior, &pair.current) {
            (None, Some(cur)) => {
                new_lesion_sentence(Severity::from_intensity(cur.intensity), cond, organ)
            }
            _ => match weighted_index(rng, &[0.55, 0.15, 0.2, 0.1]) {
                0 => progression_sentence(cond, label, organ),
                1 => progression_marker_sentence(cond, label, organ),
                2 => extent_sentence(cond, organ, true),
                _ => short_trend_sentence(cond, true),
            },
        },
        ProgressionLabel::Improved => match (&pair.prior, &pair.current) {
            (Some(pri), None) => {
                resolved_lesion_sentence(Severity::from_intensity(pri.intensity), cond, organ)
            }
            _ => match weighted_index(rng, &[0.55, 0.15, 0.2, 0.1]) {
                0 => progression_sentence(cond, label, organ),
                1 => progression_marker_sentence(cond, label, organ),
                2 => extent_sentence(cond, organ, false),
                _ => short_trend_sentence(cond, false),
            },
        },
        ProgressionLabel::Unchanged => match weighted_index(rng, &[0.6, 0.25, 0.15]) {
            0 => progression_sentence(cond, label, organ),
            1 => stable_sentence(cond, organ),
            _ => unchanged_marker_sentence(cond),
        },
    }
}

/// Generate one study pair from a seed. Same seed, same pair.
pub fn generate_study_pair(seed: u64, cfg: &GenConfig) -> Result<StudyPair> {
    cfg.validate()?;
    let lex = ComparisonLexicon::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_seed: u64 = rng.gen();

    let n_lesions = weighted_index(&mut rng, &cfg.lesion_count_weights) + 1;
    let mut conditions = Condition::ALL.to_vec();
    conditions.shuffle(&mut rng);
    let mut organs = Organ::ALL.to_vec();
    organs.shuffle(&mut rng);

    let mut lesion_pairs = Vec::with_capacity(n_lesions);
    for i in 0..n_lesions {
        lesion_pairs.push(sample_lesion_pair(&mut rng, cfg, conditions[i], organs[i])?);
    }

    let annotations = lesion_pairs
        .iter()
        .map(|p| annotation_for(p, cfg.epsilon))
        .collect::<Result<Vec<_>>>()?;

    let prior_scene = Scene {
        noise_seed,
        lesions: lesion_pairs.iter().filter_map(|p| p.prior.clone()).collect(),
    };
    let current_scene = Scene {
        noise_seed,
        lesions: lesion_pairs
            .iter()
            .filter_map(|p| p.current.clone())
            .collect(),
    };

    // Findings describe the current image; the impression carries the
    // comparisons.
    let mut findings: Vec<String> = current_scene
        .lesions
        .iter()
        .map(|l| status_sentence(Severity::from_intensity(l.intensity), l.condition, l.organ))
        .collect();
    if findings.is_empty() {
        findings.push(lungs_clear_sentence());
    }
    let impression: Vec<String> = lesion_pairs
        .iter()
        .zip(&annotations)
        .map(|(p, a)| comparison_sentence(&mut rng, p, a.progression))
        .collect();
    let report = Report {
        indication: "follow-up examination.".to_string(),
        findings,
        impression,
    };

    let cleaned = clean_report(&report, &lex);
    if !cleaned.rejects.is_empty() {
        return Err(Error::Data(format!(
            "generator emitted uncleanable sentence: {:?}",
            cleaned.rejects[0]
        )));
    }
    let texts = SubdatasetTexts {
        sd1: cleaned.report.body_text(),
        sd2: report.body_text(),
        sd3: extract_comparisons(&report, &lex).join(" "),
        sd4: annotations
            .iter()
            .map(serialize_scene_annotation)
            .collect::<Vec<_>>()
            .join(" "),
    };

    let prior_image = render_scene(&prior_scene, cfg.image_side);
    let current_image = render_scene(&current_scene, cfg.image_side);

    Ok(StudyPair {
        study_id: format!("{seed:016x}"),
        lesion_pairs,
        prior_scene,
        current_scene,
        annotations,
        report,
        texts,
        image_side: cfg.image_side,
        prior_image,
        current_image,
    })
}

/// Paths of the four record files written by [`build_subdatasets`].
#[derive(Debug, Clone)]
pub struct SubdatasetFiles {
    pub sd1: PathBuf,
    pub sd2: PathBuf,
    pub sd3: PathBuf,
    pub sd4: PathBuf,
}

impl SubdatasetFiles {
    pub fn in_dir(dir: &Path) -> Self {
        SubdatasetFiles {
            sd1: dir.join("sd1.jsonl"),
            sd2: dir.join("sd2.jsonl"),
            sd3: dir.join("sd3.jsonl"),
            sd4: dir.join("sd4.jsonl"),
        }
    }
}

/// Write the four sub-dataset record files. Sub-datasets 3 and 4 get the
/// reversed-pair augmentation (":rev" study ids), doubling their counts.
pub fn build_subdatasets(pairs: &[StudyPair], out_dir: &Path) -> Result<SubdatasetFiles> {
    std::fs::create_dir_all(out_dir)?;
    let files = SubdatasetFiles::in_dir(out_dir);
    let lex = ComparisonLexicon::default();

    let mut sd1 = Vec::new();
    let mut sd2 = Vec::new();
    let mut sd3 = Vec::new();
    let mut sd4 = Vec::new();
    for p in pairs {
        sd1.push(Record {
            study_id: p.study_id.clone(),
            text: p.texts.sd1.clone(),
            kind: "description".into(),
        });
        sd2.push(Record {
            study_id: p.study_id.clone(),
            text: p.texts.sd2.clone(),
            kind: "report".into(),
        });
        sd3.push(Record {
            study_id: p.study_id.clone(),
            text: p.texts.sd3.clone(),
            kind: "comparison".into(),
        });
        let reversed_sd3 = split_sentences(&p.texts.sd3)
            .iter()
            .map(|s| reverse_comparison_text(s, &lex))
            .collect::<Vec<_>>()
            .join(" ");
        sd3.push(Record {
            study_id: format!("{}:rev", p.study_id),
            text: reversed_sd3,
            kind: "comparison".into(),
        });
        sd4.push(Record {
            study_id: p.study_id.clone(),
            text: p.texts.sd4.clone(),
            kind: "annotation".into(),
        });
        let reversed_sd4 = p
            .annotations
            .iter()
            .map(|a| serialize_scene_annotation(&a.reversed()))
            .collect::<Vec<_>>()
            .join(" ");
        sd4.push(Record {
            study_id: format!("{}:rev", p.study_id),
            text: reversed_sd4,
            kind: "annotation".into(),
        });
    }
    crate::report::write_records(&files.sd1, &sd1)?;
    crate::report::write_records(&files.sd2, &sd2)?;
    crate::report::write_records(&files.sd3, &sd3)?;
    crate::report::write_records(&files.sd4, &sd4)?;
    Ok(files)
}

/// Write a full corpus directory: images (PGM + f32 sidecars), gold scene
/// records, sectioned reports, and the four sub-dataset files.
pub fn write_corpus(pairs: &[StudyPair], out_dir: &Path) -> Result<SubdatasetFiles> {
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir)?;

    let mut scene_lines = Vec::new();
    let mut report_lines = Vec::new();
    for p in pairs {
        for (tag, img) in [("prior", &p.prior_image), ("current", &p.current_image)] {
            let pgm = img_dir.join(format!("{}.{tag}.pgm", p.study_id));
            let f32p = img_dir.join(format!("{}.{tag}.f32", p.study_id));
            super::pgm::write_pgm(&pgm, p.image_side, img)?;
            super::pgm::write_f32(&f32p, p.image_side, img)?;
        }
        let record = StudyRecord {
            study_id: p.study_id.clone(),
            noise_seed: p.prior_scene.noise_seed,
            image_side: p.image_side,
            lesion_pairs: p.lesion_pairs.clone(),
            annotations: p.annotations.clone(),
        };
        scene_lines.push(serde_json::to_string(&record)?);
        report_lines.push(crate::report::format_sectioned_report(&p.report));
    }
    std::fs::write(out_dir.join("scenes.jsonl"), scene_lines.join("\n") + "\n")?;
    std::fs::write(out_dir.join("reports.txt"), report_lines.join("\n") + "\n")?;
    build_subdatasets(pairs, out_dir)
}

/// Read back the gold records of [`write_corpus`].
pub fn read_study_records(dir: &Path) -> Result<Vec<StudyRecord>> {
    let text = std::fs::read_to_string(dir.join("scenes.jsonl"))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig::default();
        let a = generate_study_pair(99, &cfg).unwrap();
        let b = generate_study_pair(99, &cfg).unwrap();
        assert_eq!(a.current_image, b.current_image);
        assert_eq!(a.texts, b.texts);
        assert_eq!(a.annotations, b.annotations);
    }

    #[test]
    fn sd3_sentences_always_carry_a_term() {
        let cfg = GenConfig::default();
        let lex = ComparisonLexicon::default();
        for seed in 0..50 {
            let p = generate_study_pair(seed, &cfg).unwrap();
            for s in split_sentences(&p.texts.sd3) {
                assert!(lex.sentence_has_term(&s), "{s}");
            }
        }
    }

    #[test]
    fn cleaning_sd2_reproduces_sd1() {
        let cfg = GenConfig::default();
        let lex = ComparisonLexicon::default();
        for seed in 0..50 {
            let p = generate_study_pair(seed, &cfg).unwrap();
            let as_report = Report {
                indication: String::new(),
                findings: split_sentences(&p.texts.sd2),
                impression: vec![],
            };
            let cleaned = clean_report(&as_report, &lex);
            assert!(cleaned.rejects.is_empty());
            assert_eq!(cleaned.report.body_text(), p.texts.sd1, "seed {seed}");
        }
    }

    #[test]
    fn stored_annotations_are_rederivable() {
        let cfg = GenConfig::default();
        for seed in 0..50 {
            let p = generate_study_pair(seed, &cfg).unwrap();
            for (pair, ann) in p.lesion_pairs.iter().zip(&p.annotations) {
                let again = annotation_for(pair, cfg.epsilon).unwrap();
                assert_eq!(&again, ann);
            }
        }
    }

    #[test]
    fn reversal_commutes_with_label_flip() {
        let cfg = GenConfig::default();
        for seed in 0..50 {
            let p = generate_study_pair(seed, &cfg).unwrap();
            for pair in &p.lesion_pairs {
                let fwd = derive_progression_label(
                    pair.prior.as_ref(),
                    pair.current.as_ref(),
                    cfg.epsilon,
                )
                .unwrap();
                let rev = pair.reversed();
                let bwd = derive_progression_label(
                    rev.prior.as_ref(),
                    rev.current.as_ref(),
                    cfg.epsilon,
                )
                .unwrap();
                assert_eq!(bwd, fwd.flip());
            }
        }
    }

    #[test]
    fn subdataset_files_double_sd3_sd4() {
        let cfg = GenConfig {
            image_side: 32,
            ..Default::default()
        };
        let pairs: Vec<StudyPair> = (0..6)
            .map(|i| generate_study_pair(1000 + i, &cfg).unwrap())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let files = build_subdatasets(&pairs, dir.path()).unwrap();
        let sd1 = crate::report::read_records(&files.sd1).unwrap();
        let sd3 = crate::report::read_records(&files.sd3).unwrap();
        let sd4 = crate::report::read_records(&files.sd4).unwrap();
        assert_eq!(sd1.len(), 6);
        assert_eq!(sd3.len(), 12);
        assert_eq!(sd4.len(), 12);

        // Reversed sd4 records flip the label and swap the boxes.
        for chunk in sd4.chunks(2) {
            let (fwd, rev) = (&chunk[0], &chunk[1]);
            assert_eq!(rev.study_id, format!("{}:rev", fwd.study_id));
            let (fa, ff) = crate::report::parse_annotation_text(&fwd.text);
            let (ra, rf) = crate::report::parse_annotation_text(&rev.text);
            assert!(ff.is_empty() && rf.is_empty());
            assert_eq!(fa.len(), ra.len());
            for (f, r) in fa.iter().zip(&ra) {
                assert_eq!(r.progression, f.progression.flip());
                assert_eq!(r.box_current, f.box_prior);
                assert_eq!(r.box_prior, f.box_current);
            }
        }
    }

    #[test]
    fn thousand_pair_class_histogram_is_balanced() {
        let cfg = GenConfig::default();
        let mut counts = [0usize; 3];
        let mut total = 0usize;
        for seed in 0..1000u64 {
            let p = generate_study_pair(seed, &cfg).unwrap();
            for a in &p.annotations {
                let idx = match a.progression {
                    ProgressionLabel::Worsened => 0,
                    ProgressionLabel::Unchanged => 1,
                    ProgressionLabel::Improved => 2,
                };
                counts[idx] += 1;
                total += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let frac = c as f64 / total as f64;
            assert!(
                (frac - 1.0 / 3.0).abs() <= 0.03,
                "class {i}: {frac:.4} of {total}"
            );
        }
    }
}
