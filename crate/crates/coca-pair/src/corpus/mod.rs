//! Synthetic paired-image corpus with ground-truth scene annotations.

pub mod atlas;
pub mod generate;
pub mod pgm;
pub mod progression;
pub mod render;

pub use generate::{build_subdatasets, generate_study_pair, write_corpus, GenConfig, SubdatasetFiles};
pub use progression::{annotation_for, derive_progression_label, DEFAULT_EPSILON};
pub use render::render_scene;

use serde::{Deserialize, Serialize};

use crate::report::{Condition, Organ, Report, SceneAnnotation};

/// One parameterized lesion: an isotropic blob of extent `sigma` and peak
/// intensity `intensity`, rendered with a condition-specific profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub condition: Condition,
    pub organ: Organ,
    /// Normalized (x, y) center.
    pub center: (f64, f64),
    /// Normalized extent, in [0.03, 0.25].
    pub sigma: f64,
    /// Peak intensity in [0, 1].
    pub intensity: f64,
}

impl Lesion {
    /// Scalar severity used for progression labeling.
    pub fn severity(&self) -> f64 {
        self.intensity * self.sigma * self.sigma
    }
}

/// A renderable scene: background noise seed plus the present lesions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub noise_seed: u64,
    pub lesions: Vec<Lesion>,
}

/// The temporal evolution of one lesion across the pair. `None` means the
/// lesion is absent on that side (new or resolved findings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionPair {
    pub prior: Option<Lesion>,
    pub current: Option<Lesion>,
}

impl LesionPair {
    /// Condition/organ key (identical on both present sides by construction).
    pub fn key(&self) -> (Condition, Organ) {
        let l = self
            .current
            .as_ref()
            .or(self.prior.as_ref())
            .expect("lesion pair with both sides absent");
        (l.condition, l.organ)
    }

    /// Largest extent across the two sides (used to bucket detection results).
    pub fn max_sigma(&self) -> f64 {
        let s1 = self.prior.as_ref().map(|l| l.sigma).unwrap_or(0.0);
        let s2 = self.current.as_ref().map(|l| l.sigma).unwrap_or(0.0);
        s1.max(s2)
    }

    /// The swapped-order pair.
    pub fn reversed(&self) -> LesionPair {
        LesionPair {
            prior: self.current.clone(),
            current: self.prior.clone(),
        }
    }
}

/// Per-sub-dataset training texts of one study pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdatasetTexts {
    /// Cleaned description of the current image.
    pub sd1: String,
    /// Full report body (description + comparisons).
    pub sd2: String,
    /// Comparison sentences only.
    pub sd3: String,
    /// Serialized scene annotations.
    pub sd4: String,
}

/// A generated study: scenes, rendered images, annotations, and texts.
#[derive(Debug, Clone)]
pub struct StudyPair {
    pub study_id: String,
    pub lesion_pairs: Vec<LesionPair>,
    pub prior_scene: Scene,
    pub current_scene: Scene,
    pub annotations: Vec<SceneAnnotation>,
    pub report: Report,
    pub texts: SubdatasetTexts,
    pub image_side: usize,
    pub prior_image: Vec<f32>,
    pub current_image: Vec<f32>,
}

/// The JSONL gold record stored beside the images; everything else about a
/// pair can be re-derived from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub noise_seed: u64,
    pub image_side: usize,
    pub lesion_pairs: Vec<LesionPair>,
    pub annotations: Vec<SceneAnnotation>,
}
