use serde::{Deserialize, Serialize};

use super::matrix::Real;
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
///
/// Moment buffers are allocated on the first step and must keep the same
/// tensor layout afterwards.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(lr: T, weight_decay: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut [T]>, grads: Vec<&[T]>) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::usage(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if params.iter().zip(&grads).any(|(p, g)| p.len() != g.len()) {
            return Err(Error::usage("parameter and gradient shapes differ"));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(&params).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::usage("parameter layout changed between optimizer steps"));
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = T::one() - self.beta1.powi(t);
        let bias2 = T::one() - self.beta2.powi(t);
        let decay = T::one() - self.lr * self.weight_decay;
        let (b1, b2) = (self.beta1, self.beta2);

        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second)
        {
            for i in 0..p.len() {
                p[i] *= decay;
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Learning rate `base_lr · gamma^epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLrSchedule {
    pub base_lr: f64,
    pub gamma: f64,
}

impl StepLrSchedule {
    pub fn new(base_lr: f64, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::usage(format!("gamma {gamma} outside (0, 1]")));
        }
        if !(base_lr >= 0.0 && base_lr.is_finite()) {
            return Err(Error::usage(format!("invalid base learning rate {base_lr}")));
        }
        Ok(Self { base_lr, gamma })
    }

    pub fn lr(&self, epoch: u32) -> f64 {
        self.base_lr * self.gamma.powi(epoch as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut opt = AdamW::new(0.1f64, 0.0);
        let mut p = vec![1.0, -2.0, 3.0];
        opt.step(vec![&mut p], vec![&[0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_matches_hand_recurrence() {
        // m = 0.1, v = 0.001, m̂ = 1, v̂ = 1 → p = 0.5 - 0.01·1/(1 + 1e-8)
        let mut opt = AdamW::new(0.01f64, 0.0);
        let mut p = vec![0.5];
        opt.step(vec![&mut p], vec![&[1.0]]).unwrap();
        assert!((p[0] - (0.5 - 0.01 / (1.0 + 1e-8))).abs() < 1e-15);

        // Second step with g = -2:
        // m = 0.09 - 0.2 = -0.11, v = 0.000999 + 0.004 = 0.004999
        // m̂ = -0.11/0.19, v̂ = 0.004999/0.001999
        let before = p[0];
        opt.step(vec![&mut p], vec![&[-2.0]]).unwrap();
        let m_hat: f64 = -0.11 / (1.0 - 0.81);
        let v_hat: f64 = 0.004999 / (1.0 - 0.998001);
        let expected = before - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12, "{} vs {}", p[0], expected);
    }

    #[test]
    fn pure_weight_decay_scales_parameters() {
        let mut opt = AdamW::new(1.0f64, 0.1);
        let mut p = vec![2.0, -4.0];
        opt.step(vec![&mut p], vec![&[0.0, 0.0]]).unwrap();
        assert!((p[0] - 1.8).abs() < 1e-12 && (p[1] + 3.6).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut opt = AdamW::new(0.0f32, 1e-6);
        let mut p = vec![0.25f32, 7.0];
        for _ in 0..3 {
            opt.step(vec![&mut p], vec![&[1.0, -3.0]]).unwrap();
        }
        assert_eq!(p, vec![0.25, 7.0]);
    }

    #[test]
    fn layout_changes_are_rejected() {
        let mut opt = AdamW::new(0.1f32, 0.0);
        let mut a = vec![1.0f32; 2];
        opt.step(vec![&mut a], vec![&[0.0, 0.0]]).unwrap();
        let mut b = vec![1.0f32; 3];
        assert!(opt.step(vec![&mut b], vec![&[0.0; 3]]).is_err());
        assert!(opt.step(vec![&mut a], vec![&[0.0; 3]]).is_err());
    }

    #[test]
    fn step_schedule() {
        let s = StepLrSchedule::new(3e-5, 0.87).unwrap();
        assert_eq!(s.lr(0), 3e-5);
        assert!((s.lr(1) - 3e-5 * 0.87).abs() < 1e-20);
        let flat = StepLrSchedule::new(1e-3, 1.0).unwrap();
        assert!((0..10).all(|e| flat.lr(e) == 1e-3));
        assert!(StepLrSchedule::new(1e-3, 0.0).is_err());
        assert!(StepLrSchedule::new(1e-3, 1.5).is_err());
    }
}
