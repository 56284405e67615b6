//! Adam with bias-corrected moments.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers per parameter name plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub step: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One Adam update of every parameter that has an entry in `grads`.
///
/// All gradients are checked for finiteness before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name)?;
        if g.len() != p.len() {
            return Err(Error::dim(format!("adam_step {name}"), "len", p.len(), g.len()));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{name}` at element {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);
    let bc1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let bc2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    for (name, g) in grads {
        let p = params.get_mut(name)?;
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_params(v: f64) -> ModelParams<f64> {
        let mut p = ModelParams::empty();
        p.insert("w", Tensor::full([1, 1, 1, 1], v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_params(0.7);
        let mut s = AdamState::new();
        let grads = BTreeMap::from([("w".to_string(), vec![0.0])]);
        adam_step(&mut p, &grads, &mut s, &AdamConfig::default()).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.7]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g², so the update is lr·g/(|g| + eps).
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new();
        let cfg = AdamConfig { lr: 1e-3, ..Default::default() };
        let grads = BTreeMap::from([("w".to_string(), vec![1.0])]);
        adam_step(&mut p, &grads, &mut s, &cfg).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_params(0.0);
        let mut s = AdamState::new();
        let grads = BTreeMap::from([("w".to_string(), vec![f64::NAN])]);
        let err = adam_step(&mut p, &grads, &mut s, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(s.step, 0);
    }

    #[test]
    fn deterministic_over_many_steps() {
        let run = || {
            let mut p = scalar_params(1.0);
            let mut s = AdamState::new();
            for i in 0..100 {
                let g = p.get("w").unwrap().data()[0] * 2.0 + (i as f64).sin();
                let grads = BTreeMap::from([("w".to_string(), vec![g])]);
                adam_step(&mut p, &grads, &mut s, &AdamConfig::default()).unwrap();
            }
            p.get("w").unwrap().data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
