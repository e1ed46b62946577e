use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// A trainable tensor with its AdamW moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            first_moment: Tensor::zeros(shape.clone()),
            second_moment: Tensor::zeros(shape),
            step_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.beta1 > 0.0
            && self.beta2 > 0.0
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid AdamW settings {self:?}")))
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Applies one update to every parameter holding a gradient. Parameters
    /// without a gradient (unused heads) are left untouched, including their
    /// step counts. Nothing is modified if any gradient is non-finite.
    pub fn step(&self, store: &mut ParamStore) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = &store.value(id).grad {
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of `{}` at flat index {pos} is {}",
                        store.name(id),
                        g[pos]
                    )));
                }
            }
        }
        let c = self.config;
        for p in store.params_mut() {
            let Some(grad) = p.value.grad.take() else {
                continue;
            };
            p.step_count += 1;
            let t = p.step_count as i32;
            let bc1 = 1.0 - c.beta1.powi(t);
            let bc2 = 1.0 - c.beta2.powi(t);
            let decay = 1.0 - c.learning_rate * c.weight_decay;
            let m = p.first_moment.data_mut();
            for (mi, gi) in m.iter_mut().zip(&grad) {
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
            }
            let v = p.second_moment.data_mut();
            for (vi, gi) in v.iter_mut().zip(&grad) {
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
            }
            let (m, v) = (p.first_moment.data(), p.second_moment.data());
            for ((theta, mi), vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *theta = *theta * decay - c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let total: f64 = store
        .params()
        .iter()
        .filter_map(|p| p.value.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let k = max_norm / total;
        for p in store.params_mut() {
            if let Some(g) = p.value.grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= k);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> (ParamStore, crate::tensor::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(value));
        store.accumulate_grad(id, &[grad]).unwrap();
        (store, id)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let (mut store, id) = single(1.0, 1.0);
        AdamW::new(cfg).unwrap().step(&mut store).unwrap();
        // m_hat = 1, v_hat = 1 -> delta = lr / (1 + eps)
        let want = 1.0 - 1e-4 / (1.0 + 1e-8);
        assert!((store.value(id).item() - want).abs() < 1e-15);
        assert_eq!(store.get(id).step_count, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let (mut store, id) = single(0.75, 0.0);
        AdamW::new(cfg).unwrap().step(&mut store).unwrap();
        assert_eq!(store.value(id).item(), 0.75);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks() {
        let cfg = AdamWConfig {
            learning_rate: 1e-2,
            weight_decay: 0.5,
            ..Default::default()
        };
        let (mut store, id) = single(2.0, 0.0);
        AdamW::new(cfg).unwrap().step(&mut store).unwrap();
        assert!((store.value(id).item() - 2.0 * (1.0 - 1e-2 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn parameters_without_gradient_are_skipped() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0));
        let b = store.add("b", Tensor::scalar(1.0));
        store.accumulate_grad(a, &[0.3]).unwrap();
        AdamW::new(AdamWConfig::default()).unwrap().step(&mut store).unwrap();
        assert_ne!(store.value(a).item(), 1.0);
        assert_eq!(store.value(b).item(), 1.0);
        assert_eq!(store.get(b).step_count, 0);
    }

    #[test]
    fn non_finite_gradient_aborts_without_updating() {
        let (mut store, id) = single(1.0, f64::NAN);
        let err = AdamW::new(AdamWConfig::default()).unwrap().step(&mut store).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(store.value(id).item(), 1.0);
    }

    #[test]
    fn second_moment_stays_non_negative() {
        let (mut store, id) = single(1.0, -3.0);
        let opt = AdamW::new(AdamWConfig::default()).unwrap();
        for k in 0..5 {
            store.accumulate_grad(id, &[if k % 2 == 0 { -3.0 } else { 2.0 }]).unwrap();
            opt.step(&mut store).unwrap();
            assert!(store.get(id).second_moment.data()[0] >= 0.0);
        }
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            AdamWConfig { learning_rate: 0.0, ..Default::default() },
            AdamWConfig { beta1: 1.0, ..Default::default() },
            AdamWConfig { beta2: 1.5, ..Default::default() },
            AdamWConfig { weight_decay: -1.0, ..Default::default() },
        ] {
            assert!(AdamW::new(cfg).is_err());
        }
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::zeros([2]));
        store.accumulate_grad(a, &[3.0, 4.0]).unwrap();
        let before = clip_grad_norm(&mut store, 1.0);
        assert_eq!(before, 5.0);
        let g = store.value(a).grad.clone().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
    }
}
