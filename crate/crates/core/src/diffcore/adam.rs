use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment estimates for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Self {
        let zeros = |p: &Tensor<T>| Tensor::zeros(p.shape().to_vec());
        Self {
            config,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// One bias-corrected Adam update. Parameters whose gradient is `None`
    /// were not part of the computation and are left untouched, moments
    /// included.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Option<Tensor<T>>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::arg(
                "adam_step",
                format!("{} params, {} grads, state for {}", params.len(), grads.len(), self.first.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.first[i].shape() {
                return Err(Error::shape("adam_step", &[p.shape(), self.first[i].shape()]));
            }
            if let Some(g) = g {
                if g.shape() != p.shape() {
                    return Err(Error::shape("adam_step", &[p.shape(), g.shape()]));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let bias1 = T::one() - T::of(c.beta1.powi(self.step as i32));
        let bias2 = T::one() - T::of(c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(c.learning_rate), T::of(c.epsilon));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let Some(g) = g else { continue };
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![Tensor::vector(vec![1.0f64, -2.0])];
        let mut state = AdamState::new(&p, AdamConfig::default());
        state.step(&mut p, &[Some(Tensor::vector(vec![0.0, 0.0]))]).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn positive_gradient_decreases_param() {
        let mut p = vec![Tensor::scalar(1.0f64)];
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut state = AdamState::new(&p, cfg);
        state.step(&mut p, &[Some(Tensor::scalar(1.0))]).unwrap();
        assert!(p[0].data()[0] < 1.0);
    }

    #[test]
    fn two_steps_match_hand_trace() {
        // Hand trace, g = 0.5, lr = 0.01, defaults otherwise.
        // step 1: m = 0.05, v = 0.00025; m̂ = 0.5, v̂ = 0.25 → Δ = 0.01·0.5/(0.5+1e-8)
        // step 2: m = 0.095, v = 0.00049975; m̂ = 0.095/0.19 = 0.5,
        //         v̂ = 0.00049975/0.001999 = 0.25 → same Δ
        let lr = 0.01;
        let delta = lr * 0.5 / (0.5 + 1e-8);
        let want = 2.0 - 2.0 * delta;
        let mut p = vec![Tensor::scalar(2.0f64)];
        let mut state = AdamState::new(
            &p,
            AdamConfig {
                learning_rate: lr,
                ..Default::default()
            },
        );
        for _ in 0..2 {
            state.step(&mut p, &[Some(Tensor::scalar(0.5))]).unwrap();
        }
        assert!((p[0].data()[0] - want).abs() < 1e-12);
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![Tensor::scalar(1.0f64)];
        let mut state = AdamState::new(&p, AdamConfig::default());
        let bad = Some(Tensor::vector(vec![1.0, 2.0]));
        assert!(state.step(&mut p, &[bad]).is_err());
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn missing_gradient_skips_parameter() {
        let mut p = vec![Tensor::scalar(1.0f64), Tensor::scalar(1.0)];
        let mut state = AdamState::new(&p, AdamConfig::default());
        state.step(&mut p, &[None, Some(Tensor::scalar(1.0))]).unwrap();
        assert_eq!(p[0].data()[0], 1.0);
        assert!(p[1].data()[0] < 1.0);
    }
}
