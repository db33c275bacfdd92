use std::collections::BTreeMap;

use crate::error::{mismatch, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter plus step counters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    /// Number of applied (non-skipped) updates.
    pub step: u64,
    /// Updates rejected because a gradient contained NaN or infinity.
    pub skipped: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    Skipped,
}

/// One bias-corrected Adam update of every parameter that has an entry in
/// `grads`. A non-finite gradient anywhere skips the whole step.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    config: AdamConfig,
) -> Result<StepOutcome> {
    for (name, g) in grads {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(mismatch("adam_step", p.shape(), g.shape()));
        }
    }
    if grads.values().any(|g| !g.is_finite()) {
        state.skipped += 1;
        return Ok(StepOutcome::Skipped);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (name, g) in grads {
        if !state.m.contains(name) {
            state.m.insert(name.clone(), Tensor::zeros(g.shape()));
            state.v.insert(name.clone(), Tensor::zeros(g.shape()));
        }
        let m = state.m.get_mut(name)?.data_mut();
        for (mi, gi) in m.iter_mut().zip(g.data()) {
            *mi = config.beta1 * *mi + (1.0 - config.beta1) * gi;
        }
        let v = state.v.get_mut(name)?.data_mut();
        for (vi, gi) in v.iter_mut().zip(g.data()) {
            *vi = config.beta2 * *vi + (1.0 - config.beta2) * gi * gi;
        }
        let m = state.m.get(name)?.data();
        let v = state.v.get(name)?.data();
        let p = params.get_mut(name)?.data_mut();
        for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            *pi -= lr * mhat / (vhat.sqrt() + config.eps);
        }
    }
    Ok(StepOutcome::Applied)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(w));
        p
    }

    fn grad(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = single(1.5);
        let mut s = AdamState::default();
        adam_step(&mut p, &grad(2.0), &mut s, 0.1, AdamConfig::default()).unwrap();
        let w = p.get("w").unwrap().item().unwrap();
        let m_before = s.m.get("w").unwrap().item().unwrap();
        adam_step(&mut p, &grad(0.0), &mut s, 0.1, AdamConfig::default()).unwrap();
        let m_after = s.m.get("w").unwrap().item().unwrap();
        assert!(m_after.abs() < m_before.abs());

        let mut fresh = single(1.5);
        let mut s2 = AdamState::default();
        adam_step(&mut fresh, &grad(0.0), &mut s2, 0.1, AdamConfig::default()).unwrap();
        assert_eq!(fresh.get("w").unwrap().item().unwrap(), 1.5);
        assert_eq!(s2.m.get("w").unwrap().item().unwrap(), 0.0);
        assert!(w < 1.5);
    }

    #[test]
    fn one_step_descends_on_square() {
        let mut p = single(1.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &grad(2.0), &mut s, 0.1, AdamConfig::default()).unwrap();
        assert!(p.get("w").unwrap().item().unwrap() < 1.0);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut p = single(0.0);
        let mut s = AdamState::default();
        for _ in 0..200 {
            let w = p.get("w").unwrap().item().unwrap();
            adam_step(&mut p, &grad(2.0 * (w - 3.0)), &mut s, 0.1, AdamConfig::default()).unwrap();
        }
        let w = p.get("w").unwrap().item().unwrap();
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
    }

    #[test]
    fn nan_gradient_skips_step() {
        let mut p = single(1.0);
        let mut s = AdamState::default();
        let out = adam_step(&mut p, &grad(f64::NAN), &mut s, 0.1, AdamConfig::default()).unwrap();
        assert_eq!(out, StepOutcome::Skipped);
        assert_eq!(s.skipped, 1);
        assert_eq!(s.step, 0);
        assert_eq!(p.get("w").unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = single(1.0);
        let g = BTreeMap::from([("w".to_string(), Tensor::zeros(&[2]))]);
        assert!(adam_step(&mut p, &g, &mut AdamState::default(), 0.1, AdamConfig::default()).is_err());
    }
}
