//! Adam optimizer over a fixed list of parameter tensors.

use crate::math::{cst, Mat, Real};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one pair per tensor.
///
/// The tensor list and its order are fixed at construction; every `step`
/// must pass tensors and gradients in that same order.
pub struct AdamState<F> {
    m: Vec<Mat<F>>,
    v: Vec<Mat<F>>,
    step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new_like(tensors: &[&Mat<F>]) -> Self {
        let zeros: Vec<Mat<F>> =
            tensors.iter().map(|t| Mat::zeros(t.shape().0, t.shape().1)).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    /// One bias-corrected update, in place.
    pub fn step(&mut self, learning_rate: F, tensors: &mut [&mut Mat<F>], grads: &[&Mat<F>]) {
        assert_eq!(tensors.len(), self.m.len(), "tensor count changed between steps");
        assert_eq!(grads.len(), self.m.len(), "gradient count must match tensor count");
        self.step += 1;
        let beta1 = cst::<F>(ADAM_BETA1);
        let beta2 = cst::<F>(ADAM_BETA2);
        let eps = cst::<F>(ADAM_EPS);
        let one = F::one();
        let corr1 = one - beta1.powi(self.step as i32);
        let corr2 = one - beta2.powi(self.step as i32);

        for i in 0..tensors.len() {
            assert_eq!(tensors[i].shape(), self.m[i].shape(), "tensor shape changed");
            assert_eq!(grads[i].shape(), self.m[i].shape(), "gradient shape mismatch");
            let theta = tensors[i].data_mut();
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..theta.len() {
                m[j] = beta1 * m[j] + (one - beta1) * g[j];
                v[j] = beta2 * v[j] + (one - beta2) * g[j] * g[j];
                let m_hat = m[j] / corr1;
                let v_hat = v[j] / corr2;
                theta[j] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        // f(x) = (x - 3)^2, gradient 2(x - 3).
        let mut x: Mat<f64> = Mat::zeros(1, 1);
        let mut adam = AdamState::new_like(&[&x]);
        for _ in 0..2000 {
            let g = Mat::from_vec(1, 1, vec![2.0 * (x.data()[0] - 3.0)]);
            adam.step(0.05, &mut [&mut x], &[&g]);
        }
        assert!((x.data()[0] - 3.0).abs() < 1e-6, "ended at {}", x.data()[0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut x: Mat<f64> = Mat::from_vec(1, 2, vec![1.5, -0.25]);
        let before = x.data().to_vec();
        let zero = Mat::zeros(1, 2);
        let mut adam = AdamState::new_like(&[&x]);
        for _ in 0..5 {
            adam.step(0.1, &mut [&mut x], &[&zero]);
        }
        assert_eq!(x.data(), &before[..]);
    }

    #[test]
    fn identical_runs_take_identical_trajectories() {
        let run = || {
            let mut x: Mat<f32> = Mat::from_vec(1, 1, vec![4.0]);
            let mut adam = AdamState::new_like(&[&x]);
            for _ in 0..50 {
                let g = Mat::from_vec(1, 1, vec![2.0 * x.data()[0]]);
                adam.step(0.01, &mut [&mut x], &[&g]);
            }
            x.data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
