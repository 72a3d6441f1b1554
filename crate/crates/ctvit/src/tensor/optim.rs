//! Parameter update rules: Adam (default) and SGD with momentum.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Moment buffers in parameter order, for checkpointing.
    pub fn state(&self) -> (u64, &[Vec<f64>], &[Vec<f64>]) {
        (self.step, &self.m, &self.v)
    }

    pub fn restore(step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step,
            m,
            v,
        }
    }

    /// One update over all parameters, reading each tensor's gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, param) in params.iter_mut().enumerate() {
            let grad = param
                .grad()
                .ok_or_else(|| Error::Shape(format!("parameter {idx} has no gradient")))?;
            if grad.len() != param.len() {
                return Err(Error::Shape(format!(
                    "parameter {idx}: gradient length {} != parameter length {}",
                    grad.len(),
                    param.len()
                )));
            }
            let grad = grad.to_vec();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            if m.len() != grad.len() {
                return Err(Error::Shape(format!(
                    "parameter {idx}: state length {} != gradient length {}",
                    m.len(),
                    grad.len()
                )));
            }
            let data = param.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}

/// Classical momentum SGD: `v = mu*v + g; p -= lr*v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    step: u64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> Self {
        SgdMomentum {
            momentum,
            step: 0,
            velocity: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn state(&self) -> (u64, &[Vec<f64>]) {
        (self.step, &self.velocity)
    }

    pub fn restore(momentum: f64, step: u64, velocity: Vec<Vec<f64>>) -> Self {
        SgdMomentum {
            momentum,
            step,
            velocity,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f64) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        self.step += 1;
        for (idx, param) in params.iter_mut().enumerate() {
            let grad = param
                .grad()
                .ok_or_else(|| Error::Shape(format!("parameter {idx} has no gradient")))?
                .to_vec();
            if grad.len() != param.len() {
                return Err(Error::Shape(format!(
                    "parameter {idx}: gradient length {} != parameter length {}",
                    grad.len(),
                    param.len()
                )));
            }
            let vel = &mut self.velocity[idx];
            let data = param.data_mut();
            for i in 0..grad.len() {
                vel[i] = self.momentum * vel[i] + grad[i];
                data[i] -= lr * vel[i];
            }
        }
        Ok(())
    }
}

/// Optimizer selected by configuration; Adam unless stated otherwise.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Sgd(SgdMomentum),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f64) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, lr),
            Optimizer::Sgd(s) => s.step(params, lr),
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::Adam(a) => a.step_count(),
            Optimizer::Sgd(s) => s.step_count(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(data: Vec<f64>) -> Tensor {
        Tensor::new(vec![data.len()], data).unwrap()
    }

    #[test]
    fn zero_grad_leaves_params_unchanged_and_increments_step() {
        let mut p = param(vec![1.0, -2.0, 3.0]);
        p.set_grad(vec![0.0; 3]).unwrap();
        let before = p.data().to_vec();
        let mut opt = Adam::new();
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.data(), before.as_slice());
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // Bias correction makes m_hat = g and v_hat = g^2 on step one, so the
        // update is -lr * g / (|g| + eps) ~ -lr * sign(g).
        let mut p = param(vec![0.0]);
        p.set_grad(vec![2.0]).unwrap();
        let mut opt = Adam::new();
        opt.step(&mut [&mut p], 0.1).unwrap();
        let expected = -0.1 * 2.0 / (2.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((p.data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn two_steps_match_scalar_oracle() {
        // Independent scalar Adam, written out step by step.
        let (beta1, beta2, eps, lr) = (0.9, 0.999, 1e-8, 0.05);
        let grads = [1.0, -1.0];
        let mut x_oracle = 0.3_f64;
        let (mut m, mut v) = (0.0_f64, 0.0_f64);
        for (t, &g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            let m_hat = m / (1.0 - beta1.powi(t));
            let v_hat = v / (1.0 - beta2.powi(t));
            x_oracle -= lr * m_hat / (v_hat.sqrt() + eps);
        }

        let mut p = param(vec![0.3]);
        let mut opt = Adam::new();
        for &g in &grads {
            p.set_grad(vec![g]).unwrap();
            opt.step(&mut [&mut p], lr).unwrap();
        }
        assert!(
            (p.data()[0] - x_oracle).abs() < 1e-12,
            "adam diverged from scalar oracle: {} vs {}",
            p.data()[0],
            x_oracle
        );
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut p = param(vec![1.0]);
        let mut opt = Adam::new();
        assert!(opt.step(&mut [&mut p], 0.1).is_err());
    }

    #[test]
    fn state_shape_mismatch_is_an_error() {
        let mut p = param(vec![1.0, 2.0]);
        p.set_grad(vec![0.1, 0.1]).unwrap();
        let mut opt = Adam::restore(1, vec![vec![0.0]], vec![vec![0.0]]);
        assert!(opt.step(&mut [&mut p], 0.1).is_err());
    }

    #[test]
    fn sgd_momentum_accumulates_velocity() {
        let mut p = param(vec![0.0]);
        let mut opt = SgdMomentum::new(0.9);
        p.set_grad(vec![1.0]).unwrap();
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-15);
        p.set_grad(vec![1.0]).unwrap();
        opt.step(&mut [&mut p], 0.1).unwrap();
        // v = 0.9*1 + 1 = 1.9 -> x = -0.1 - 0.19
        assert!((p.data()[0] + 0.29).abs() < 1e-15);
    }
}
