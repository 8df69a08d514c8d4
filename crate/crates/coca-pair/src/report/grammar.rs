//! Sentence builders for the controlled report language.
//!
//! Every sentence the synthetic corpus emits comes from one of these
//! templates, which keeps cleaning and reversal exact. The builders are the
//! single source of truth for the surface forms; `clean.rs` recognizes the
//! same shapes.

use serde::{Deserialize, Serialize};

use super::annotation::{Condition, Organ, ProgressionLabel};

/// Coarse intensity bucket used in descriptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::Severe => "severe",
        }
    }

    /// Bucket a peak intensity in [0,1].
    pub fn from_intensity(a: f64) -> Self {
        if a < 0.45 {
            Severity::Mild
        } else if a < 0.65 {
            Severity::Moderate
        } else {
            Severity::Severe
        }
    }
}

/// "mild pneumonia is present at left lower lung zone."
pub fn status_sentence(sev: Severity, cond: Condition, organ: Organ) -> String {
    format!(
        "{} {} is present at {}.",
        sev.as_str(),
        cond.as_str(),
        organ.as_str()
    )
}

/// "the lungs are clear."
pub fn lungs_clear_sentence() -> String {
    "the lungs are clear.".to_string()
}

/// "pneumonia is worsened at left lower lung zone."
pub fn progression_sentence(cond: Condition, label: ProgressionLabel, organ: Organ) -> String {
    format!(
        "{} is {} at {}.",
        cond.as_str(),
        label.as_str(),
        organ.as_str()
    )
}

/// Marker variant: "... at left lower lung zone compared to the prior study."
pub fn progression_marker_sentence(
    cond: Condition,
    label: ProgressionLabel,
    organ: Organ,
) -> String {
    format!(
        "{} is {} at {} compared to the prior study.",
        cond.as_str(),
        label.as_str(),
        organ.as_str()
    )
}

/// "new mild pneumonia at left lower lung zone."
pub fn new_lesion_sentence(sev: Severity, cond: Condition, organ: Organ) -> String {
    format!(
        "new {} {} at {}.",
        sev.as_str(),
        cond.as_str(),
        organ.as_str()
    )
}

/// "mild pneumonia at left lower lung zone has resolved."
pub fn resolved_lesion_sentence(sev: Severity, cond: Condition, organ: Organ) -> String {
    format!(
        "{} {} at {} has resolved.",
        sev.as_str(),
        cond.as_str(),
        organ.as_str()
    )
}

/// "pneumonia at left lower lung zone has increased in extent."
pub fn extent_sentence(cond: Condition, organ: Organ, increased: bool) -> String {
    format!(
        "{} at {} has {} in extent.",
        cond.as_str(),
        organ.as_str(),
        if increased { "increased" } else { "decreased" }
    )
}

/// "pneumonia at left lower lung zone is stable."
pub fn stable_sentence(cond: Condition, organ: Organ) -> String {
    format!("{} at {} is stable.", cond.as_str(), organ.as_str())
}

/// "pneumonia is unchanged since the previous examination."
pub fn unchanged_marker_sentence(cond: Condition) -> String {
    format!(
        "{} is unchanged since the previous examination.",
        cond.as_str()
    )
}

/// Short comparative: "worsening pneumonia." / "improving pneumonia."
pub fn short_trend_sentence(cond: Condition, worsening: bool) -> String {
    format!(
        "{} {}.",
        if worsening { "worsening" } else { "improving" },
        cond.as_str()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_produce_expected_surface_forms() {
        assert_eq!(
            status_sentence(Severity::Mild, Condition::Pneumonia, Organ::LeftLung),
            "mild pneumonia is present at left lung."
        );
        assert_eq!(
            progression_sentence(
                Condition::PleuralEffusion,
                ProgressionLabel::Improved,
                Organ::RightLowerLungZone
            ),
            "pleural effusion is improved at right lower lung zone."
        );
        assert_eq!(
            new_lesion_sentence(Severity::Severe, Condition::Edema, Organ::LeftApicalZone),
            "new severe edema at left apical zone."
        );
        assert_eq!(
            short_trend_sentence(Condition::PleuralEffusion, true),
            "worsening pleural effusion."
        );
    }

    #[test]
    fn comparison_builders_always_carry_a_lexicon_term() {
        let lex = super::super::lexicon::ComparisonLexicon::default();
        let sentences = [
            progression_sentence(Condition::Pneumonia, ProgressionLabel::Unchanged, Organ::LeftLung),
            progression_marker_sentence(
                Condition::Edema,
                ProgressionLabel::Worsened,
                Organ::RightLung,
            ),
            new_lesion_sentence(Severity::Mild, Condition::Consolidation, Organ::LeftLung),
            resolved_lesion_sentence(Severity::Mild, Condition::Pneumothorax, Organ::RightLung),
            extent_sentence(Condition::Pneumonia, Organ::LeftLung, false),
            stable_sentence(Condition::Pneumonia, Organ::LeftLung),
            unchanged_marker_sentence(Condition::Edema),
            short_trend_sentence(Condition::Pneumonia, false),
        ];
        for s in sentences {
            assert!(lex.sentence_has_term(&s), "no lexicon term in: {s}");
        }
    }
}
