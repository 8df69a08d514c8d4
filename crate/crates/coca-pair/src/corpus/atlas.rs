//! Canonical organ atlas: fixed normalized centers for the ten structures.
//!
//! These are scenario constants, not learned quantities. Positions are laid
//! out on a stylized frontal chest: "left" structures sit on the left half
//! of the image, apical zones near the top, costophrenic angles near the
//! bottom. Real zones overlap; disjointness is not required.

use crate::report::Organ;

/// Normalized (x, y) center for an organ; y grows downward.
pub fn organ_center(organ: Organ) -> (f64, f64) {
    match organ {
        Organ::LeftApicalZone => (0.30, 0.18),
        Organ::LeftCostophrenicAngle => (0.24, 0.80),
        Organ::LeftHilarStructures => (0.40, 0.46),
        Organ::LeftLowerLungZone => (0.30, 0.66),
        Organ::LeftLung => (0.30, 0.44),
        Organ::RightApicalZone => (0.70, 0.18),
        Organ::RightCostophrenicAngle => (0.76, 0.80),
        Organ::RightHilarStructures => (0.60, 0.46),
        Organ::RightLowerLungZone => (0.70, 0.66),
        Organ::RightLung => (0.70, 0.44),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_leave_room_for_boxes() {
        // center +- 2*sigma_max must stay comfortably renderable.
        for organ in Organ::ALL {
            let (x, y) = organ_center(organ);
            assert!((0.1..=0.9).contains(&x), "{organ:?}");
            assert!((0.1..=0.9).contains(&y), "{organ:?}");
        }
    }
}
