//! First-order optimizers over flat parameter lists.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Update rule used by latent and pixel optimizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Adaptive moment estimation.
    Adam,
    /// Plain `x <- x - lr * grad`.
    Gradient,
}

#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Defaults of the original method: betas (0.9, 0.999).
    pub fn with_lr(lr: f64) -> Self {
        Self::new(lr, 0.9, 0.999)
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update; `grads[i]` matches `params[i]`, `None` means zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Option<&[T]>]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        self.step += 1;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let step_size = T::from_f64_lossy(self.lr * c2.sqrt() / c1);
        let eps = T::from_f64_lossy(self.eps * c2.sqrt());
        for (k, p) in params.iter_mut().enumerate() {
            let Some(g) = grads[k] else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *x -= step_size * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

/// Global L2 norm of a gradient list.
pub fn grad_norm<T: Scalar>(grads: &[Option<&[T]>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| {
            let f = v.to_f64_lossy();
            f * f
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = Tensor::<f64>::from_vec(&[2], vec![3.0, -2.0]);
        let mut opt = Adam::with_lr(0.1);
        for _ in 0..500 {
            let g: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
            opt.step(&mut [&mut x], &[Some(&g)]);
        }
        assert!(x.data().iter().all(|v| v.abs() < 1e-2), "{:?}", x.data());
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut x = Tensor::<f32>::from_vec(&[3], vec![0.5, -1.0, 2.0]);
        let before = x.clone();
        let mut opt = Adam::with_lr(0.01);
        for _ in 0..10 {
            opt.step(&mut [&mut x], &[Some(&[0.0, 0.0, 0.0])]);
        }
        assert_eq!(x, before);
    }
}
