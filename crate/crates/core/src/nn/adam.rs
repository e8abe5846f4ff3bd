use serde::{Deserialize, Serialize};

use super::ParamSet;

/// Adam with bias correction.
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

    /// Applies one update from the accumulated gradients, bumps the step
    /// counter and clears the gradients.
    pub fn step(&self, params: &mut ParamSet) {
        params.step += 1;
        let t = params.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for p in params.iter_mut() {
            let grad = p.grad.as_mut_slice();
            let m = p.m.as_mut_slice();
            let v = p.v.as_mut_slice();
            let w = p.value.as_mut_slice();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                grad[i] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor2;

    fn scalar(value: f64) -> (ParamSet, crate::nn::ParamId) {
        let mut params = ParamSet::new();
        let id = params.add("theta", Tensor2::filled(1, 1, value));
        (params, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut params, id) = scalar(0.7);
        Adam::default().step(&mut params);
        assert_eq!(params.value(id).get(0, 0), 0.7);
        assert_eq!(params.step(), 1);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let (mut params, id) = scalar(0.7);
        params.get_mut_for_test(id).m.set(0, 0, 0.5);
        params.get_mut_for_test(id).v.set(0, 0, 0.25);
        Adam::default().step(&mut params);
        assert!((params.get(id).first_moment().get(0, 0) - 0.45).abs() < 1e-15);
        assert!((params.get(id).second_moment().get(0, 0) - 0.24975).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut params, id) = scalar(0.0);
        params.accumulate(id, &[1.0]);
        let adam = Adam::default();
        adam.step(&mut params);
        let expected = -adam.lr / (1.0 + adam.eps);
        assert!((params.value(id).get(0, 0) - expected).abs() < 1e-18);
        assert_eq!(params.grad(id).get(0, 0), 0.0);
    }

    #[test]
    fn quadratic_descends() {
        // Independent recurrence of the same update rule.
        let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }

        let (mut params, id) = scalar(1.0);
        let adam = Adam::default();
        for _ in 0..100 {
            let theta = params.value(id).get(0, 0);
            params.accumulate(id, &[2.0 * theta]);
            adam.step(&mut params);
        }
        let theta = params.value(id).get(0, 0);
        assert!(theta.abs() < 1.0);
        assert!((theta - x).abs() < 1e-12);
        assert_eq!(params.step(), 100);
    }

    #[test]
    fn quadratic_with_default_lr_and_larger_rate() {
        let (mut params, id) = scalar(1.0);
        let adam = Adam::with_lr(0.1);
        for _ in 0..100 {
            let theta = params.value(id).get(0, 0);
            params.accumulate(id, &[2.0 * theta]);
            adam.step(&mut params);
        }
        assert!(params.value(id).get(0, 0).abs() < 0.5);
    }
}
