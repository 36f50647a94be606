use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: usize },
    #[error("parameter {param}: gradient shape {grad:?} does not match {expected:?}")]
    Shape {
        param: usize,
        grad: (usize, usize),
        expected: (usize, usize),
    },
    #[error("expected {expected} gradients, got {got}")]
    Count { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay, applied as `θ -= lr · wd · θ`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let first: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    /// One bias-corrected Adam update. Nothing is modified if any gradient
    /// is non-finite or misshapen.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), OptimError> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(OptimError::Count {
                expected: self.first.len(),
                got: params.len().min(grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first[i].shape() != g.shape() {
                return Err(OptimError::Shape {
                    param: i,
                    grad: g.shape(),
                    expected: self.first[i].shape(),
                });
            }
            if !g.is_finite() {
                return Err(OptimError::NonFiniteGradient { param: i });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((theta, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let m_hat = *mj / c1;
                let v_hat = *vj / c2;
                *theta -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *theta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = Tensor::from_rows(&[[2.0, -4.0]]);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        adam.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        let k = 1.0 - 1e-3 * 1e-5;
        assert_eq!(p.data(), &[2.0 * k, -4.0 * k]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps).
        let mut p = Tensor::scalar(0.0);
        let cfg = AdamConfig::default();
        let mut adam = AdamState::new(cfg, [&p]);
        adam.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        let expected = -cfg.lr * (1.0 / (1.0 + cfg.eps));
        assert!((p.get(0, 0) - expected).abs() < 1e-18);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut a = Tensor::scalar(0.3);
        let mut b = Tensor::scalar(0.3);
        let mut adam = AdamState::new(AdamConfig::default(), [&a, &b]);
        for step in 0..5 {
            let g = Tensor::scalar(0.1 * step as f64 - 0.2);
            adam.step(&mut [&mut a, &mut b], &[g.clone(), g]).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn nan_gradient_aborts_without_update() {
        let mut p = Tensor::scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), [&p]);
        let err = adam
            .step(&mut [&mut p], &[Tensor::scalar(f64::NAN)])
            .unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient { param: 0 });
        assert_eq!(p.get(0, 0), 1.0);
        assert_eq!(adam.step, 0);
    }
}
