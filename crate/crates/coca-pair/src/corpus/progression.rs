//! Progression labeling from lesion severity, and the single boxing rule
//! shared by generation and gold re-derivation.

use super::{Lesion, LesionPair};
use crate::report::{BoxCoords, ProgressionLabel, SceneAnnotation};
use crate::{Error, Result};

/// Default relative severity margin between classes.
pub const DEFAULT_EPSILON: f64 = 0.15;

/// Label the change between two observations of the same condition+organ.
///
/// Severity is `intensity * sigma^2`. A lesion absent before and present now
/// is "new" (worsened); present before and absent now is "resolved"
/// (improved).
pub fn derive_progression_label(
    prior: Option<&Lesion>,
    current: Option<&Lesion>,
    epsilon: f64,
) -> Result<ProgressionLabel> {
    if epsilon <= 0.0 {
        return Err(Error::config("epsilon must be positive"));
    }
    match (prior, current) {
        (None, None) => Err(Error::Data("lesion absent on both sides".into())),
        (None, Some(_)) => Ok(ProgressionLabel::Worsened),
        (Some(_), None) => Ok(ProgressionLabel::Improved),
        (Some(p), Some(c)) => {
            if p.condition != c.condition || p.organ != c.organ {
                return Err(Error::Data(format!(
                    "lesion identity mismatch: {:?}/{:?} vs {:?}/{:?}",
                    p.condition, p.organ, c.condition, c.organ
                )));
            }
            let rel = c.severity() / p.severity() - 1.0;
            Ok(if rel > epsilon {
                ProgressionLabel::Worsened
            } else if rel < -epsilon {
                ProgressionLabel::Improved
            } else {
                ProgressionLabel::Unchanged
            })
        }
    }
}

/// Box of a lesion: center +- 2 sigma, clamped to [0,1], two decimals.
pub fn lesion_box(lesion: &Lesion) -> Result<BoxCoords> {
    let (cx, cy) = lesion.center;
    let r = 2.0 * lesion.sigma;
    BoxCoords::rounded2(
        (cx - r).clamp(0.0, 1.0),
        (cx + r).clamp(0.0, 1.0),
        (cy - r).clamp(0.0, 1.0),
        (cy + r).clamp(0.0, 1.0),
    )
}

/// Build the gold annotation for a lesion pair. The absent side of a
/// new/resolved lesion borrows the present side's geometry (the organ
/// region where the lesion would sit).
pub fn annotation_for(pair: &LesionPair, epsilon: f64) -> Result<SceneAnnotation> {
    let progression =
        derive_progression_label(pair.prior.as_ref(), pair.current.as_ref(), epsilon)?;
    let reference = pair
        .current
        .as_ref()
        .or(pair.prior.as_ref())
        .expect("checked by derive_progression_label");
    let box_current = lesion_box(pair.current.as_ref().unwrap_or(reference))?;
    let box_prior = lesion_box(pair.prior.as_ref().unwrap_or(reference))?;
    Ok(SceneAnnotation {
        condition: reference.condition,
        progression,
        organ: reference.organ,
        box_current,
        box_prior,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{Condition, Organ};

    fn lesion(sigma: f64, intensity: f64) -> Lesion {
        Lesion {
            condition: Condition::Pneumonia,
            organ: Organ::LeftLowerLungZone,
            center: (0.30, 0.66),
            sigma,
            intensity,
        }
    }

    #[test]
    fn identical_lesions_are_unchanged() {
        let l = lesion(0.08, 0.5);
        assert_eq!(
            derive_progression_label(Some(&l), Some(&l), DEFAULT_EPSILON).unwrap(),
            ProgressionLabel::Unchanged
        );
    }

    #[test]
    fn appearance_is_worsened_disappearance_improved() {
        let l = lesion(0.08, 0.5);
        assert_eq!(
            derive_progression_label(None, Some(&l), DEFAULT_EPSILON).unwrap(),
            ProgressionLabel::Worsened
        );
        assert_eq!(
            derive_progression_label(Some(&l), None, DEFAULT_EPSILON).unwrap(),
            ProgressionLabel::Improved
        );
        assert!(derive_progression_label(None, None, DEFAULT_EPSILON).is_err());
    }

    #[test]
    fn sigma_doubling_quadruples_severity() {
        let prior = lesion(0.05, 0.5);
        let current = lesion(0.10, 0.5);
        assert_eq!(
            derive_progression_label(Some(&prior), Some(&current), DEFAULT_EPSILON).unwrap(),
            ProgressionLabel::Worsened
        );
    }

    #[test]
    fn mismatched_identity_is_an_error() {
        let a = lesion(0.08, 0.5);
        let mut b = a.clone();
        b.condition = Condition::Edema;
        assert!(derive_progression_label(Some(&a), Some(&b), DEFAULT_EPSILON).is_err());
    }

    #[test]
    fn boxes_are_two_sigma_and_two_decimals() {
        let l = lesion(0.08, 0.5);
        let b = lesion_box(&l).unwrap();
        assert_eq!(b.x1, 0.14);
        assert_eq!(b.x2, 0.46);
        assert_eq!(b.y1, 0.50);
        assert_eq!(b.y2, 0.82);
    }

    #[test]
    fn absent_side_borrows_geometry() {
        let l = lesion(0.08, 0.5);
        let pair = LesionPair {
            prior: None,
            current: Some(l.clone()),
        };
        let ann = annotation_for(&pair, DEFAULT_EPSILON).unwrap();
        assert_eq!(ann.progression, ProgressionLabel::Worsened);
        assert_eq!(ann.box_current, ann.box_prior);
    }
}
