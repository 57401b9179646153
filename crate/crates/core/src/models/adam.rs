use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching either the parameters or the moments.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: params.len(),
            actual: state.m.len(),
        });
    }
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_first_step_is_noop() {
        let mut p = vec![0.3, -1.2, 4.0];
        let before = p.clone();
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.0; 3], &mut s, 1e-3).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn constant_gradient_matches_closed_form() {
        // With a constant gradient g the bias-corrected moments are exactly
        // g and g^2 up to rounding, so every step is lr * g / (|g| + eps).
        for &g in &[2.5, -0.03, 1e-3] {
            let lr = 0.01;
            let mut p = vec![1.0];
            let mut s = AdamState::new(1);
            let step = lr * g / (f64::abs(g) + ADAM_EPSILON);
            for t in 1..=500 {
                adam_step(&mut p, &[g], &mut s, lr).unwrap();
                let expected = 1.0 - t as f64 * step;
                assert!((p[0] - expected).abs() <= 1e-12 * t as f64, "g={g} t={t}");
            }
            assert!((step - lr * g.signum()).abs() < lr * 1e-5);
        }
    }

    #[test]
    fn rejects_non_finite_without_mutation() {
        let mut p = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        let err = adam_step(&mut p, &[0.1, f64::NAN], &mut s, 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { index: 1 }));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s, AdamState::new(2));
    }

    #[test]
    fn shape_and_lr_errors() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        assert!(adam_step(&mut p, &[1.0, 2.0], &mut s, 1e-3).is_err());
        assert!(adam_step(&mut p, &[1.0], &mut s, 0.0).is_err());
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut p = vec![0.5, -0.5, 0.25];
            let mut s = AdamState::new(3);
            for i in 0..100 {
                let g: Vec<f64> = p.iter().map(|x| x * (i as f64).sin() + 0.1).collect();
                adam_step(&mut p, &g, &mut s, 0.01).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
