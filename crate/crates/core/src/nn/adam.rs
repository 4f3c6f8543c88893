use serde::{Deserialize, Serialize};

use super::NetParams;
use crate::error::{contract_err, Error, Result};

/// Bias-corrected adaptive-moment optimiser state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update to a raw parameter slice.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(contract_err(format!(
                "adam shapes differ: params {}, grads {}, state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some((i, g)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gradient {g} at parameter {i} (step {})",
                self.step + 1
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

pub fn adam_step(params: &mut NetParams, grads: &[f64], state: &mut AdamState) -> Result<()> {
    state.step(params.values_mut(), grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.0];
        let mut s = AdamState::new(2, 1e-3);
        s.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_hand_computation() {
        // m_hat = 1, v_hat = 1 -> delta = -lr / (1 + eps).
        let mut p = vec![0.0];
        let mut s = AdamState::new(1, 1e-3);
        s.step(&mut p, &[1.0]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
        assert!((p[0] + 9.99999e-4).abs() < 1e-9);
    }

    #[test]
    fn counter_increments_by_one() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3, 1e-3);
        for k in 1..=5 {
            s.step(&mut p, &[0.1, -0.2, 0.3]).unwrap();
            assert_eq!(s.step, k);
        }
    }

    #[test]
    fn non_finite_gradient_is_a_training_error() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2, 1e-3);
        let err = s.step(&mut p, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Training(ref m) if m.contains("parameter 1")));
        assert_eq!(s.step, 0);
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let g = [0.3, -0.7, 1e-4];
        let run = || {
            let mut p = vec![1.0, 2.0, 3.0];
            let mut s = AdamState::new(3, 1e-3);
            for _ in 0..10 {
                s.step(&mut p, &g).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }
}
