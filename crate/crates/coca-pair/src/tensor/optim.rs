//! AdamW with decoupled weight decay and bias-corrected moments.

use std::collections::BTreeMap;

use super::{Element, Tensor, TensorMap};
use crate::{Error, Result};

/// AdamW hyperparameters. Defaults follow common practice; the paper only
/// names the optimizer and per-stage learning rates.
#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Optimizer state: first/second moment per parameter plus the step count.
pub struct AdamW<E: Element> {
    pub config: AdamWConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<E>, Vec<E>)>,
}

impl<E: Element> AdamW<E> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every parameter named in `grads`.
    ///
    /// Parameters not mentioned in `grads` are left untouched (frozen).
    /// A non-finite gradient aborts with the parameter's name.
    pub fn step(&mut self, params: &mut TensorMap<E>, grads: &BTreeMap<String, Vec<E>>) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let bias1 = E::from_f64(1.0 - c.beta1.powf(t));
        let bias2 = E::from_f64(1.0 - c.beta2.powf(t));
        let (lr, b1, b2) = (E::from_f64(c.lr), E::from_f64(c.beta1), E::from_f64(c.beta2));
        let one_m_b1 = E::from_f64(1.0 - c.beta1);
        let one_m_b2 = E::from_f64(1.0 - c.beta2);
        let eps = E::from_f64(c.eps);
        let decay = E::from_f64(1.0 - c.lr * c.weight_decay);

        for (name, grad) in grads {
            let param = params
                .get_mut(name)
                .ok_or_else(|| Error::config(format!("unknown parameter '{name}'")))?;
            if grad.len() != param.numel() {
                return Err(Error::shape(format!(
                    "gradient length {} != parameter '{name}' numel {}",
                    grad.len(),
                    param.numel()
                )));
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGrad {
                    param: name.clone(),
                });
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![E::zero(); grad.len()], vec![E::zero(); grad.len()]));
            let data = param.data_mut();
            for i in 0..grad.len() {
                let gi = grad[i];
                m[i] = b1 * m[i] + one_m_b1 * gi;
                v[i] = b2 * v[i] + one_m_b2 * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                // Decoupled decay first, then the adaptive update.
                data[i] = data[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Snapshot the moment buffers as named tensors for checkpointing.
    pub fn export_state(&self) -> (u64, TensorMap<E>) {
        let mut out = TensorMap::new();
        for (name, (m, v)) in &self.moments {
            out.insert(
                format!("optim.m.{name}"),
                Tensor::from_op(vec![1, m.len()], m.clone()),
            );
            out.insert(
                format!("optim.v.{name}"),
                Tensor::from_op(vec![1, v.len()], v.clone()),
            );
        }
        (self.step, out)
    }

    /// Restore moments exported by [`AdamW::export_state`].
    pub fn import_state(&mut self, step: u64, tensors: &TensorMap<E>) -> Result<()> {
        self.step = step;
        self.moments.clear();
        for (name, t) in tensors {
            if let Some(param) = name.strip_prefix("optim.m.") {
                let entry = self
                    .moments
                    .entry(param.to_string())
                    .or_insert_with(|| (Vec::new(), Vec::new()));
                entry.0 = t.data().to_vec();
            } else if let Some(param) = name.strip_prefix("optim.v.") {
                let entry = self
                    .moments
                    .entry(param.to_string())
                    .or_insert_with(|| (Vec::new(), Vec::new()));
                entry.1 = t.data().to_vec();
            }
        }
        for (name, (m, v)) in &self.moments {
            if m.len() != v.len() || m.is_empty() {
                return Err(Error::Checkpoint(format!(
                    "incomplete optimizer state for '{name}'"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: Vec<f64>) -> TensorMap<f64> {
        let mut p = TensorMap::new();
        p.insert("w".into(), Tensor::new(vec![1, value.len()], value).unwrap());
        p
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut params = one_param(vec![0.5, -1.5]);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![0.0, 0.0]);
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params.get("w").unwrap().data(), &[0.5, -1.5]);
    }

    #[test]
    fn first_step_is_signed_lr() {
        // Bias correction makes the first update ~ -lr * sign(g).
        let mut params = one_param(vec![1.0, 1.0]);
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![3.0, -0.2]);
        opt.step(&mut params, &grads).unwrap();
        let w = params.get("w").unwrap().data();
        // m_hat/ (sqrt(v_hat)+eps) = g/|g| up to eps
        assert!((w[0] - (1.0 - 0.01)).abs() < 1e-6, "got {}", w[0]);
        assert!((w[1] - (1.0 + 0.01)).abs() < 1e-6, "got {}", w[1]);
    }

    #[test]
    fn zero_grad_with_decay_is_pure_decay() {
        let mut params = one_param(vec![2.0]);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![0.0]);
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params.get("w").unwrap().data()[0], 2.0 * (1.0 - 0.1 * 0.5));
    }

    #[test]
    fn non_finite_grad_names_the_parameter() {
        let mut params = one_param(vec![1.0]);
        let mut opt = AdamW::<f64>::new(Default::default());
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![f64::NAN]);
        let err = opt.step(&mut params, &grads).unwrap_err();
        match err {
            Error::NonFiniteGrad { param } => assert_eq!(param, "w"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn untouched_params_stay_bit_identical() {
        let mut params = one_param(vec![0.123456789]);
        params.insert("frozen".into(), Tensor::new(vec![1, 1], vec![0.777]).unwrap());
        let mut opt = AdamW::<f64>::new(Default::default());
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![0.5]);
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params.get("frozen").unwrap().data()[0].to_bits(), 0.777f64.to_bits());
    }

    #[test]
    fn state_roundtrip() {
        let mut params = one_param(vec![1.0, 2.0]);
        let mut opt = AdamW::<f64>::new(Default::default());
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![0.3, -0.4]);
        opt.step(&mut params, &grads).unwrap();
        let (step, state) = opt.export_state();
        let mut opt2 = AdamW::<f64>::new(Default::default());
        opt2.import_state(step, &state).unwrap();
        // Same subsequent trajectory.
        let mut p1 = params.clone();
        let mut p2 = params.clone();
        opt.step(&mut p1, &grads).unwrap();
        opt2.step(&mut p2, &grads).unwrap();
        assert_eq!(p1.get("w").unwrap().data(), p2.get("w").unwrap().data());
    }
}
