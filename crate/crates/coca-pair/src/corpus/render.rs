//! Scene rendering: fixed smooth background template, seeded low-frequency
//! noise, and condition-specific lesion profiles.
//!
//! All pixel math runs in f64 but images are stored as f32, which keeps a
//! fixed-precision value path for determinism checks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Lesion, Scene};
use crate::report::Condition;

/// Number of random sinusoids mixed into the background.
const NOISE_WAVES: usize = 6;
const NOISE_AMPLITUDE: f64 = 0.035;

/// Smooth "anatomy" template: two soft lung fields on a dark ground.
fn background_template(x: f64, y: f64) -> f64 {
    let lung = |cx: f64| {
        let dx = (x - cx) / 0.17;
        let dy = (y - 0.48) / 0.31;
        let r2 = dx * dx + dy * dy;
        (-r2 * r2 * 0.5).exp()
    };
    0.28 + 0.30 * (lung(0.30) + lung(0.70)).min(1.0)
}

/// Condition-specific intensity profile at squared radius `r2 = r^2/sigma^2`
/// (signed; pneumothorax is an air pocket, darker than the background).
fn lesion_profile(cond: Condition, dx: f64, dy: f64, sigma: f64) -> f64 {
    let r2 = (dx * dx + dy * dy) / (sigma * sigma);
    match cond {
        // Smooth isotropic blob.
        Condition::Pneumonia => (-0.5 * r2).exp(),
        // Flat-topped blob with a sharp rim.
        Condition::Consolidation => (-0.25 * r2 * r2).exp(),
        // Bottom-weighted layering.
        Condition::PleuralEffusion => {
            let step = 0.5 * (1.0 + (dy / (0.5 * sigma)).tanh());
            (-0.5 * r2).exp() * (0.25 + 0.75 * step)
        }
        // Ringed texture.
        Condition::Edema => (-0.5 * r2).exp() * (0.62 + 0.38 * (2.5 * r2.sqrt()).cos()),
        // Dark pocket.
        Condition::Pneumothorax => -(-0.5 * r2).exp(),
    }
}

fn add_lesion(img: &mut [f64], side: usize, lesion: &Lesion) {
    let (cx, cy) = lesion.center;
    let reach = 4.0 * lesion.sigma; // beyond this the profile is negligible
    let lo_x = (((cx - reach) * side as f64).floor().max(0.0)) as usize;
    let hi_x = (((cx + reach) * side as f64).ceil().min(side as f64)) as usize;
    let lo_y = (((cy - reach) * side as f64).floor().max(0.0)) as usize;
    let hi_y = (((cy + reach) * side as f64).ceil().min(side as f64)) as usize;
    for py in lo_y..hi_y {
        let y = (py as f64 + 0.5) / side as f64;
        for px in lo_x..hi_x {
            let x = (px as f64 + 0.5) / side as f64;
            let v = lesion_profile(lesion.condition, x - cx, y - cy, lesion.sigma);
            img[py * side + px] += lesion.intensity * v;
        }
    }
}

/// Render a scene to a `side x side` grayscale image in [0, 1].
///
/// Identical scenes render to identical images: the background noise is a
/// pure function of `scene.noise_seed`.
pub fn render_scene(scene: &Scene, side: usize) -> Vec<f32> {
    assert!(side >= 16, "render side must be >= 16");
    let mut rng = ChaCha8Rng::seed_from_u64(scene.noise_seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..NOISE_WAVES)
        .map(|_| {
            (
                rng.gen_range(1.0..4.0),
                rng.gen_range(1.0..4.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();

    let mut img = vec![0.0f64; side * side];
    for py in 0..side {
        let y = (py as f64 + 0.5) / side as f64;
        for px in 0..side {
            let x = (px as f64 + 0.5) / side as f64;
            let mut v = background_template(x, y);
            for &(fx, fy, phase, amp) in &waves {
                v += NOISE_AMPLITUDE * amp
                    * (std::f64::consts::TAU * (fx * x + fy * y) + phase).sin();
            }
            img[py * side + px] = v;
        }
    }
    for lesion in &scene.lesions {
        add_lesion(&mut img, side, lesion);
    }
    img.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::Organ;

    fn empty_scene() -> Scene {
        Scene {
            noise_seed: 42,
            lesions: vec![],
        }
    }

    #[test]
    fn empty_scene_is_background_only() {
        let img = render_scene(&empty_scene(), 32);
        assert_eq!(img.len(), 32 * 32);
        assert!(img.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Background is never saturated.
        assert!(img.iter().all(|&v| v < 0.95));
    }

    #[test]
    fn lesion_peak_raises_center_by_intensity() {
        let side = 48;
        let lesion = Lesion {
            condition: Condition::Pneumonia,
            organ: Organ::LeftLung,
            center: (0.3, 0.44),
            sigma: 0.08,
            intensity: 0.3,
        };
        let bg = render_scene(&empty_scene(), side);
        let with = render_scene(
            &Scene {
                noise_seed: 42,
                lesions: vec![lesion.clone()],
            },
            side,
        );
        let px = (lesion.center.0 * side as f64) as usize;
        let py = (lesion.center.1 * side as f64) as usize;
        let delta = with[py * side + px] - bg[py * side + px];
        assert!((delta - 0.3).abs() < 0.02, "delta {delta}");
    }

    #[test]
    fn rendering_is_deterministic() {
        let scene = Scene {
            noise_seed: 7,
            lesions: vec![Lesion {
                condition: Condition::Edema,
                organ: Organ::RightLung,
                center: (0.7, 0.44),
                sigma: 0.1,
                intensity: 0.5,
            }],
        };
        assert_eq!(render_scene(&scene, 48), render_scene(&scene, 48));
    }

    #[test]
    fn pneumothorax_darkens() {
        let side = 48;
        let lesion = Lesion {
            condition: Condition::Pneumothorax,
            organ: Organ::RightLung,
            center: (0.7, 0.44),
            sigma: 0.1,
            intensity: 0.4,
        };
        let bg = render_scene(&empty_scene(), side);
        let with = render_scene(
            &Scene {
                noise_seed: 42,
                lesions: vec![lesion.clone()],
            },
            side,
        );
        let px = (0.7 * side as f64) as usize;
        let py = (0.44 * side as f64) as usize;
        assert!(with[py * side + px] < bg[py * side + px]);
    }
}
