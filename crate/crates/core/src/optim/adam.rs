use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invariant("learning_rate", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::invariant("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invariant("beta2", "must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invariant("epsilon", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Moment accumulators for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// `block` names the parameter block in error messages. Entries whose
    /// gradient and moments are all zero are left bit-identical.
    pub fn step(&mut self, block: &'static str, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.len() || grads.len() != self.len() {
            return Err(Error::DimensionMismatch {
                context: block,
                expected: self.len(),
                actual: if params.len() != self.len() { params.len() } else { grads.len() },
            });
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite { block });
        }
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powf(self.step as f64);
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            if *m == 0.0 {
                continue;
            }
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = AdamState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.5];
        s.step("p", &mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_learning_rate_times_sign() {
        for g in [1e-6, 0.3, 42.0, -7.0] {
            let mut s = AdamState::new(4, AdamConfig::default());
            let mut p = vec![0.0; 4];
            s.step("p", &mut p, &[g; 4]).unwrap();
            for x in &p {
                // |g| / (|g| + eps) differs from 1 by eps/|g|
                assert_relative_eq!(*x, -0.01 * g.signum(), max_relative = 1e-8 / g.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_gradient_names_block() {
        let mut s = AdamState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        match s.step("albedo", &mut p, &[f64::NAN]) {
            Err(Error::NonFinite { block }) => assert_eq!(block, "albedo"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut p = vec![0.0; 3];
        assert!(s.step("p", &mut p, &[0.0; 3]).is_err());
    }

    #[test]
    fn identical_problems_give_identical_trajectories() {
        let run = || {
            let mut s = AdamState::new(1, AdamConfig::default());
            let mut p = vec![3.0];
            let mut traj = Vec::new();
            for _ in 0..200 {
                let g = 2.0 * (p[0] - 1.0);
                s.step("p", &mut p, &[g]).unwrap();
                traj.push(p[0].to_bits());
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn converges_on_quadratic() {
        let mut s = AdamState::new(1, AdamConfig::default().with_lr(0.05));
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = 2.0 * (p[0] - 1.0);
            s.step("p", &mut p, &[g]).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }
}
