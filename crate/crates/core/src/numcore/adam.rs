use serde::{Deserialize, Serialize};

use super::error::{shape_err, Result};
use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &[&Tensor<S>]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Tensor<S>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return shape_err("adam_step", &[self.first.len()], &[params.len(), grads.len()]);
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.first) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return shape_err("adam_step", p.shape(), g.shape());
            }
        }
        self.step += 1;
        let c = self.config;
        let bc1 = S::lit(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = S::lit(1.0 - c.beta2.powi(self.step as i32));
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (one, lr, eps) = (S::one(), S::lit(c.lr), S::lit(c.eps));
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v) = (self.first[i].data_mut(), self.second[i].data_mut());
            for (((x, &gx), mx), vx) in p.data_mut().iter_mut().zip(grads[i].data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mx = b1 * *mx + (one - b1) * gx;
                *vx = b2 * *vx + (one - b2) * gx * gx;
                let mhat = *mx / bc1;
                let vhat = *vx / bc2;
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment tensors in parameter order, first moments then second.
    pub fn moments(&self) -> (&[Tensor<S>], &[Tensor<S>]) {
        (&self.first, &self.second)
    }

    pub fn restore(config: AdamConfig, step: u64, first: Vec<Tensor<S>>, second: Vec<Tensor<S>>) -> Result<Self> {
        if first.len() != second.len() {
            return shape_err("adam_restore", &[first.len()], &[second.len()]);
        }
        for (m, v) in first.iter().zip(&second) {
            if m.shape() != v.shape() {
                return shape_err("adam_restore", m.shape(), v.shape());
            }
        }
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::<f32>::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        for _ in 0..5 {
            adam.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.steps_taken(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1 after one step with g = 1, so Δ = -lr / (1 + eps)
        let mut p = Tensor::<f64>::new(&[1], vec![0.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.step(&mut [&mut p], &[Tensor::filled(&[1], 1.0)]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15, "{}", p.data()[0]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        assert!(adam.step(&mut [&mut p], &[Tensor::zeros(&[3])]).is_err());
    }
}
