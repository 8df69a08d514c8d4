//! Corpus loading and mixed-batch sampling.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{generate::read_study_records, StudyPair, StudyRecord, SubdatasetFiles};
use crate::model::Vocabulary;
use crate::report::read_records;
use crate::{Error, Result};

/// One training sample: an image pair plus its tokenized text target.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub study_id: String,
    pub current: Arc<Vec<f32>>,
    /// `None` means an identity pair (prior := current).
    pub prior: Option<Arc<Vec<f32>>>,
    pub text_ids: Vec<u32>,
    /// Source sub-dataset, 1..=4.
    pub subdataset: u8,
}

#[derive(Debug, Clone)]
struct TokenizedRecord {
    base_id: String,
    reversed: bool,
    text_ids: Vec<u32>,
}

/// An in-memory training corpus: images keyed by study id plus the four
/// tokenized record sets.
pub struct Corpus {
    pub image_side: usize,
    images: HashMap<String, (Arc<Vec<f32>>, Arc<Vec<f32>>)>,
    records: [Vec<TokenizedRecord>; 4],
    pub golds: Vec<StudyRecord>,
}

fn split_rev(study_id: &str) -> (String, bool) {
    match study_id.strip_suffix(":rev") {
        Some(base) => (base.to_string(), true),
        None => (study_id.to_string(), false),
    }
}

impl Corpus {
    /// Load a corpus directory written by `write_corpus` (f32 sidecars are
    /// the image source of truth).
    pub fn load(dir: &Path, vocab: &Vocabulary) -> Result<Self> {
        let golds = read_study_records(dir)?;
        let mut images = HashMap::with_capacity(golds.len());
        let mut image_side = 0usize;
        for g in &golds {
            let img_dir = dir.join("images");
            let (side_p, prior) =
                crate::corpus::pgm::read_f32(&img_dir.join(format!("{}.prior.f32", g.study_id)))?;
            let (side_c, current) =
                crate::corpus::pgm::read_f32(&img_dir.join(format!("{}.current.f32", g.study_id)))?;
            if side_p != side_c {
                return Err(Error::Data(format!("image side mismatch for {}", g.study_id)));
            }
            image_side = side_c;
            images.insert(g.study_id.clone(), (Arc::new(prior), Arc::new(current)));
        }
        let files = SubdatasetFiles::in_dir(dir);
        let mut records: [Vec<TokenizedRecord>; 4] = Default::default();
        for (i, path) in [&files.sd1, &files.sd2, &files.sd3, &files.sd4]
            .into_iter()
            .enumerate()
        {
            for r in read_records(path)? {
                let (base_id, reversed) = split_rev(&r.study_id);
                if !images.contains_key(&base_id) {
                    return Err(Error::Data(format!(
                        "record {} references missing images",
                        r.study_id
                    )));
                }
                records[i].push(TokenizedRecord {
                    base_id,
                    reversed,
                    text_ids: vocab.encode(&r.text)?,
                });
            }
        }
        Ok(Corpus {
            image_side,
            images,
            records,
            golds,
        })
    }

    /// Build a corpus directly from generated pairs (no disk round trip).
    pub fn from_study_pairs(pairs: &[StudyPair], vocab: &Vocabulary) -> Result<Self> {
        let lex = crate::report::ComparisonLexicon::default();
        let mut images = HashMap::with_capacity(pairs.len());
        let mut records: [Vec<TokenizedRecord>; 4] = Default::default();
        let mut golds = Vec::with_capacity(pairs.len());
        let mut image_side = 0;
        for p in pairs {
            image_side = p.image_side;
            images.insert(
                p.study_id.clone(),
                (
                    Arc::new(p.prior_image.clone()),
                    Arc::new(p.current_image.clone()),
                ),
            );
            golds.push(StudyRecord {
                study_id: p.study_id.clone(),
                noise_seed: p.prior_scene.noise_seed,
                image_side: p.image_side,
                lesion_pairs: p.lesion_pairs.clone(),
                annotations: p.annotations.clone(),
            });
            let texts = [&p.texts.sd1, &p.texts.sd2, &p.texts.sd3, &p.texts.sd4];
            for (i, text) in texts.into_iter().enumerate() {
                records[i].push(TokenizedRecord {
                    base_id: p.study_id.clone(),
                    reversed: false,
                    text_ids: vocab.encode(text)?,
                });
            }
            // Reversal augmentation for sub-datasets 3 and 4.
            let rev3 = crate::report::split_sentences(&p.texts.sd3)
                .iter()
                .map(|s| crate::report::reverse_comparison_text(s, &lex))
                .collect::<Vec<_>>()
                .join(" ");
            records[2].push(TokenizedRecord {
                base_id: p.study_id.clone(),
                reversed: true,
                text_ids: vocab.encode(&rev3)?,
            });
            let rev4 = p
                .annotations
                .iter()
                .map(|a| crate::report::serialize_scene_annotation(&a.reversed()))
                .collect::<Vec<_>>()
                .join(" ");
            records[3].push(TokenizedRecord {
                base_id: p.study_id.clone(),
                reversed: true,
                text_ids: vocab.encode(&rev4)?,
            });
        }
        Ok(Corpus {
            image_side,
            images,
            records,
            golds,
        })
    }

    pub fn record_counts(&self) -> [usize; 4] {
        [
            self.records[0].len(),
            self.records[1].len(),
            self.records[2].len(),
            self.records[3].len(),
        ]
    }
}

/// Draw a batch whose per-sample source sub-dataset is i.i.d. categorical
/// with probabilities `ratios`. Sub-dataset-1 samples become identity
/// pairs; reversed records swap the image order.
pub fn sample_mixed_batch(
    corpus: &Corpus,
    ratios: [f64; 4],
    rng: &mut ChaCha8Rng,
    batch: usize,
) -> Result<Vec<PairSample>> {
    let total: f64 = ratios.iter().sum();
    if total <= 0.0 {
        return Err(Error::config("mixing ratios must have positive mass"));
    }
    for (i, &r) in ratios.iter().enumerate() {
        if r > 0.0 && corpus.records[i].is_empty() {
            return Err(Error::Data(format!(
                "sub-dataset {} required by ratio {r} but empty",
                i + 1
            )));
        }
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let mut x = rng.gen_range(0.0..total);
        let mut source = 3;
        for (i, &r) in ratios.iter().enumerate() {
            if x < r {
                source = i;
                break;
            }
            x -= r;
        }
        let set = &corpus.records[source];
        let rec = &set[rng.gen_range(0..set.len())];
        let (prior_img, current_img) = corpus
            .images
            .get(&rec.base_id)
            .expect("validated at load")
            .clone();
        let (current, prior) = if source == 0 {
            (current_img, None)
        } else if rec.reversed {
            (prior_img, Some(current_img))
        } else {
            (current_img, Some(prior_img))
        };
        out.push(PairSample {
            study_id: rec.base_id.clone(),
            current,
            prior,
            text_ids: rec.text_ids.clone(),
            subdataset: (source + 1) as u8,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_study_pair, GenConfig};
    use rand::SeedableRng;

    fn small_corpus() -> Corpus {
        let cfg = GenConfig {
            image_side: 32,
            ..Default::default()
        };
        let pairs: Vec<_> = (0..8)
            .map(|i| generate_study_pair(500 + i, &cfg).unwrap())
            .collect();
        Corpus::from_study_pairs(&pairs, &Vocabulary::default_vocab()).unwrap()
    }

    #[test]
    fn pure_sd1_batches_are_identity_pairs() {
        let corpus = small_corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = sample_mixed_batch(&corpus, [1.0, 0.0, 0.0, 0.0], &mut rng, 16).unwrap();
        assert!(batch.iter().all(|s| s.prior.is_none() && s.subdataset == 1));
    }

    #[test]
    fn mixing_ratios_converge() {
        let corpus = small_corpus();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ratios = [0.2, 0.25, 0.25, 0.3];
        let n = 10_000usize;
        let mut counts = [0usize; 4];
        for s in sample_mixed_batch(&corpus, ratios, &mut rng, n).unwrap() {
            counts[(s.subdataset - 1) as usize] += 1;
        }
        for i in 0..4 {
            let frac = counts[i] as f64 / n as f64;
            assert!(
                (frac - ratios[i]).abs() <= 0.02,
                "sub-dataset {}: {frac} vs {}",
                i + 1,
                ratios[i]
            );
        }
    }

    #[test]
    fn fixed_rng_reproduces_the_batch_sequence() {
        let corpus = small_corpus();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let b = sample_mixed_batch(&corpus, [0.2, 0.25, 0.25, 0.3], &mut rng, 32).unwrap();
            b.iter()
                .map(|s| (s.study_id.clone(), s.subdataset, s.prior.is_some()))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn empty_required_subdataset_is_an_error() {
        let corpus = Corpus {
            image_side: 32,
            images: HashMap::new(),
            records: Default::default(),
            golds: vec![],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_mixed_batch(&corpus, [1.0, 0.0, 0.0, 0.0], &mut rng, 4).is_err());
    }

    #[test]
    fn roundtrip_through_disk_matches_in_memory() {
        let cfg = GenConfig {
            image_side: 32,
            ..Default::default()
        };
        let pairs: Vec<_> = (0..4)
            .map(|i| generate_study_pair(900 + i, &cfg).unwrap())
            .collect();
        let vocab = Vocabulary::default_vocab();
        let mem = Corpus::from_study_pairs(&pairs, &vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();
        crate::corpus::write_corpus(&pairs, dir.path()).unwrap();
        let disk = Corpus::load(dir.path(), &vocab).unwrap();
        assert_eq!(mem.record_counts(), disk.record_counts());
        assert_eq!(mem.image_side, disk.image_side);
        for g in &mem.golds {
            let (mp, mc) = &mem.images[&g.study_id];
            let (dp, dc) = &disk.images[&g.study_id];
            assert_eq!(mp, dp);
            assert_eq!(mc, dc);
        }
    }
}
