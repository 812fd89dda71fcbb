//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros = |p: &ParamStore| {
            p.ids()
                .map(|id| {
                    let (r, c) = p.value(id).shape();
                    Matrix::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut ParamStore) {
        assert_eq!(self.first.len(), params.len(), "optimizer built for another store");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((value, grad), m), v) in params
            .values_and_grads_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((x, &g), m), v) in value
                .as_mut_slice()
                .iter_mut()
                .zip(grad.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::params::ParamId;

    fn scalar_store(x: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("x", Matrix::scalar(x)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = scalar_store(1.25);
        let mut adam = Adam::new(&p, 1e-3);
        adam.step(&mut p);
        assert_eq!(p.value(ParamId(0)).item(), 1.25);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        let mut p = scalar_store(0.0);
        let mut adam = Adam::new(&p, 1e-3);
        *p.grad_mut(ParamId(0)) = Matrix::scalar(1.0);
        adam.step(&mut p);
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1 -> update = 1e-3 / (1 + 1e-8)
        let want = -1e-3 / (1.0 + 1e-8);
        assert!((p.value(ParamId(0)).item() - want).abs() < 1e-18);
        assert_eq!(p.grad(ParamId(0)).item(), 0.0);
    }

    #[test]
    fn sign_flipping_gradient_matches_scalar_reference() {
        fn reference(grads: &[f64], lr: f64) -> f64 {
            let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
            let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
            for (t, &g) in grads.iter().enumerate() {
                let t = (t + 1) as i32;
                m = b1 * m + (1.0 - b1) * g;
                v = b2 * v + (1.0 - b2) * g * g;
                x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            }
            x
        }
        let grads = [1.0, -1.0];
        let mut p = scalar_store(0.0);
        let mut adam = Adam::new(&p, 1e-2);
        let mut after_first = 0.0;
        for (i, g) in grads.iter().enumerate() {
            *p.grad_mut(ParamId(0)) = Matrix::scalar(*g);
            adam.step(&mut p);
            if i == 0 {
                after_first = p.value(ParamId(0)).item();
            }
        }
        let x = p.value(ParamId(0)).item();
        assert!((x - reference(&grads, 1e-2)).abs() < 1e-15);
        // the second step moves back toward the start
        assert!(x.abs() < after_first.abs());
    }
}
