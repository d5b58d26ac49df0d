//! Trainable parameters and the Adam optimizer.

use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

/// A named trainable tensor with its gradient and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// First moment.
    pub m: Tensor<T>,
    /// Second moment.
    pub v: Tensor<T>,
    pub step: u64,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
            step: 0,
        }
    }

    pub fn accumulate(&mut self, grad: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(grad)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// One bias-corrected Adam update of every parameter, then zeroes grads.
    pub fn step<'a, T: Real>(&self, params: impl IntoIterator<Item = &'a mut Param<T>>) {
        for p in params {
            p.step += 1;
            let t = p.step as i32;
            let b1 = T::from_f64_lossy(self.beta1);
            let b2 = T::from_f64_lossy(self.beta2);
            let c1 = T::from_f64_lossy(1.0 - libm::pow(self.beta1, t as f64));
            let c2 = T::from_f64_lossy(1.0 - libm::pow(self.beta2, t as f64));
            let lr = T::from_f64_lossy(self.lr);
            let eps = T::from_f64_lossy(self.eps);
            let one = T::one();
            let Param {
                value, grad, m, v, ..
            } = p;
            for (((w, &g), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
    }
}
