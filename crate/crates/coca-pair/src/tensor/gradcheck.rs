//! Finite-difference gradient checking (central differences, 64-bit only).

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TensorMap;
use crate::Result;

/// Central-difference step size.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// Outcome of a gradient check. It reports; callers decide what to assert.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over sampled coordinates of |analytic - numeric| / max(1, |numeric|)
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_coord: usize,
    pub checked_coords: usize,
}

/// Compare `analytic` gradients against central finite differences of
/// `loss_fn`, sampling up to `samples_per_tensor` coordinates per parameter
/// (deterministically from `seed`).
pub fn finite_diff_gradcheck<F>(
    params: &TensorMap<f64>,
    analytic: &BTreeMap<String, Vec<f64>>,
    loss_fn: F,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&TensorMap<f64>) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_coord: 0,
        checked_coords: 0,
    };
    let h = GRADCHECK_STEP;
    for (name, grad) in analytic {
        let numel = grad.len();
        let mut coords: Vec<usize> = if numel <= samples_per_tensor {
            (0..numel).collect()
        } else {
            (0..samples_per_tensor)
                .map(|_| rng.gen_range(0..numel))
                .collect()
        };
        coords.sort_unstable();
        coords.dedup();
        for &c in &coords {
            let mut perturbed = params.clone();
            let plus = {
                let t = perturbed.get_mut(name).expect("param present");
                t.data_mut()[c] += h;
                loss_fn(&perturbed)?
            };
            let minus = {
                let t = perturbed.get_mut(name).expect("param present");
                t.data_mut()[c] -= 2.0 * h;
                loss_fn(&perturbed)?
            };
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (grad[c] - numeric).abs() / numeric.abs().max(1.0);
            report.checked_coords += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_coord = c;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn quadratic_setup() -> (TensorMap<f64>, BTreeMap<String, Vec<f64>>) {
        let mut params = TensorMap::new();
        params.insert(
            "w".to_string(),
            Tensor::new(vec![1, 3], vec![0.5, -1.2, 2.0]).unwrap(),
        );
        // f = sum w_i^2, df/dw_i = 2 w_i
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![1.0, -2.4, 4.0]);
        (params, grads)
    }

    fn quadratic_loss(p: &TensorMap<f64>) -> Result<f64> {
        Ok(p.get("w").unwrap().data().iter().map(|v| v * v).sum())
    }

    #[test]
    fn quadratic_is_exact() {
        let (params, grads) = quadratic_setup();
        let report =
            finite_diff_gradcheck(&params, &grads, quadratic_loss, 16, 0).unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.checked_coords, 3);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (params, mut grads) = quadratic_setup();
        grads.get_mut("w").unwrap()[1] += 0.05;
        let report =
            finite_diff_gradcheck(&params, &grads, quadratic_loss, 16, 0).unwrap();
        assert!(report.max_rel_error > 1e-2, "{report:?}");
        assert_eq!(report.worst_param, "w");
        assert_eq!(report.worst_coord, 1);
    }
}
