use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore};
use crate::scalar::Scalar;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for Adam, congruent with one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            config,
        }
    }

    /// One bias-corrected Adam step. Parameters are left untouched when the
    /// gradient contains a non-finite entry.
    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> Result<(), NnError> {
        if params.len() != grad.len() || params.len() != self.first_moment.len() {
            return Err(NnError::DimensionMismatch {
                expected: self.first_moment.len(),
                got: grad.len(),
            });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient { index });
        }
        self.step_count += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let one = T::one();
        let t = self.step_count as i32;
        let corr1 = one - b1.powi(t);
        let corr2 = one - b2.powi(t);
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.epsilon);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

pub fn adam_update<T: Scalar>(
    params: &mut ParamStore<T>,
    grad: &[T],
    state: &mut AdamState<T>,
) -> Result<(), NnError> {
    state.step(params.values_mut(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.push("p", vec![1], vec![v]);
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = scalar_store(1.5);
        let mut state = AdamState::new(1, AdamConfig::default());
        adam_update(&mut store, &[0.0], &mut state).unwrap();
        assert_eq!(store.values(), &[1.5]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_is_learning_rate_sized() {
        // m = 0.1, v = 0.001; bias correction gives m_hat = v_hat = 1.
        let mut store = scalar_store(0.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(1, cfg);
        adam_update(&mut store, &[1.0], &mut state).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((store.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_updates_are_identical() {
        let mut a = scalar_store(0.3);
        let mut b = scalar_store(0.3);
        let mut sa = AdamState::new(1, AdamConfig::default());
        let mut sb = sa.clone();
        for g in [0.2, -1.0, 3.0] {
            adam_update(&mut a, &[g], &mut sa).unwrap();
            adam_update(&mut b, &[g], &mut sb).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn non_finite_gradient_halts() {
        let mut store = scalar_store(0.3);
        let mut state = AdamState::new(1, AdamConfig::default());
        let err = adam_update(&mut store, &[f64::NAN], &mut state).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { index: 0 }));
        assert_eq!(store.values(), &[0.3]);
        assert_eq!(state.step_count, 0);
    }
}
