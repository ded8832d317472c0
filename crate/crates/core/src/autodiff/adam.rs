use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Hyperparameters of one Adam optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Learning rate at step t is `base_rate * t^(-decay_exponent)`.
    pub decay_exponent: f64,
}

impl AdamConfig {
    pub fn new(base_rate: f64, beta1: f64, decay_exponent: f64) -> Self {
        AdamConfig {
            base_rate,
            beta1,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_exponent,
        }
    }

    pub fn effective_rate(&self, step: u64) -> f64 {
        self.base_rate * (step as f64).powf(-self.decay_exponent)
    }
}

/// Moment buffers and step counter for a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

/// Direction of an Adam update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descend,
    Ascend,
}

impl AdamState {
    /// Zero-initialized moments matching `shapes`.
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let first_moment: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros).collect();
        let second_moment = first_moment.clone();
        AdamState {
            config,
            step: 0,
            first_moment,
            second_moment,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    ///
    /// `names` is only used to label errors. Nothing is modified when an
    /// error is returned.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        names: &[String],
        direction: Direction,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::invalid(format!(
                "adam: {} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).map(String::as_str).unwrap_or("?");
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let rate = self.config.effective_rate(self.step);
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let sign = match direction {
            Direction::Descend => -1.0,
            Direction::Ascend => 1.0,
        };
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w += sign * rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::vector(vec![1.0, -2.0]);
        let mut state = AdamState::new(AdamConfig::new(0.001, 0.9, 0.0), [w.shape()]);
        state
            .step(&mut [&mut w], &[Tensor::zeros(&[2])], &names(1), Direction::Descend)
            .unwrap();
        assert_eq!(w.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_hand_evaluated() {
        let mut w = Tensor::scalar(1.0);
        let mut state = AdamState::new(AdamConfig::new(0.001, 0.0, 0.0), [w.shape()]);
        state
            .step(&mut [&mut w], &[Tensor::scalar(1.0)], &names(1), Direction::Descend)
            .unwrap();
        // m_hat = 1, v_hat = 1 at t = 1.
        let expected = 1.0 - 0.001 * (1.0 / (1.0 + 1e-8));
        assert!((w.item().unwrap() - expected).abs() < 1e-15);
        assert!((w.item().unwrap() - 0.999).abs() < 1e-10);
    }

    #[test]
    fn update_sign_follows_gradient() {
        let mut w = Tensor::vector(vec![0.0, 0.0]);
        let mut state = AdamState::new(AdamConfig::new(0.01, 0.25, 0.15), [w.shape()]);
        let g = Tensor::vector(vec![3.0, -0.5]);
        state.step(&mut [&mut w], std::slice::from_ref(&g), &names(1), Direction::Descend).unwrap();
        assert!(w.data()[0] < 0.0 && w.data()[1] > 0.0);
        let mut u = Tensor::vector(vec![0.0, 0.0]);
        let mut asc = AdamState::new(AdamConfig::new(0.01, 0.0, 0.25), [u.shape()]);
        asc.step(&mut [&mut u], &[g], &names(1), Direction::Ascend).unwrap();
        assert!(u.data()[0] > 0.0 && u.data()[1] < 0.0);
    }

    #[test]
    fn effective_rate_schedule() {
        let c = AdamConfig::new(0.001, 0.25, 0.15);
        assert!((c.effective_rate(1) - 0.001).abs() < 1e-18);
        let expected = 0.001 * 10000f64.powf(-0.15);
        assert!((c.effective_rate(10_000) - expected).abs() < 1e-18);
        assert!((c.effective_rate(10_000) - 2.512e-4).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_is_named() {
        let mut w = Tensor::scalar(1.0);
        let mut state = AdamState::new(AdamConfig::new(0.001, 0.0, 0.0), [w.shape()]);
        let err = state
            .step(
                &mut [&mut w],
                &[Tensor::scalar(f64::NAN)],
                &["module1.0.w_id".to_string()],
                Direction::Descend,
            )
            .unwrap_err();
        assert!(err.to_string().contains("module1.0.w_id"));
        assert_eq!(state.step, 0);
        assert_eq!(w.item().unwrap(), 1.0);
    }
}
