use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::param::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub first: Tensor<T>,
    pub second: Tensor<T>,
}

/// Bias-corrected Adam. Moments are keyed by parameter name, so the update
/// does not depend on the order parameters are passed in.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<&Moments<T>> {
        self.moments.get(name)
    }

    /// Restores saved state (e.g. when resuming training).
    pub fn restore(&mut self, step: u64, moments: BTreeMap<String, Moments<T>>) {
        self.step = step;
        self.moments = moments;
    }

    pub fn all_moments(&self) -> &BTreeMap<String, Moments<T>> {
        &self.moments
    }

    /// Applies one update to every parameter and zeroes the gradients.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        let c = self.config;
        let t = self.step + 1;
        let correction1 = 1.0 - c.beta1.powi(t as i32);
        let correction2 = 1.0 - c.beta2.powi(t as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let lr = T::of(c.learning_rate);
        let (inv_c1, inv_c2) = (T::of(1.0 / correction1), T::of(1.0 / correction2));
        let eps = T::of(c.epsilon);

        for p in params.iter_mut() {
            let m = self.moments.entry(p.name.clone()).or_insert_with(|| Moments {
                first: p.value.zeros_like(),
                second: p.value.zeros_like(),
            });
            if m.first.shape() != p.value.shape() {
                return Err(Error::Dimension(format!(
                    "optimizer state for {} has shape {:?}, parameter has {:?}",
                    p.name,
                    m.first.shape(),
                    p.value.shape()
                )));
            }
            let Param { value, grad, .. } = &mut **p;
            let iter = value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.first.data_mut().iter_mut().zip(m.second.data_mut()));
            for ((theta, &g), (m1, m2)) in iter {
                *m1 = b1 * *m1 + one_b1 * g;
                *m2 = b2 * *m2 + one_b2 * g * g;
                let m_hat = *m1 * inv_c1;
                let v_hat = *m2 * inv_c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
        self.step = t;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(name: &str, value: f64, grad: f64) -> Param<f64> {
        let mut p = Param::new(name, Tensor::full(&[1], value).unwrap());
        p.grad.data_mut()[0] = grad;
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut adam = AdamState::new(AdamConfig::new(0.005));
        let mut p = scalar_param("w", 0.3, 0.0);
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.data()[0], 0.3);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let lr = 0.005;
        let mut adam = AdamState::new(AdamConfig::new(lr));
        let mut p = scalar_param("w", 1.0, 1.0);
        adam.step(&mut [&mut p]).unwrap();
        let expected = 1.0 - lr / (1.0 + 1e-8);
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
        assert_eq!(p.grad.data()[0], 0.0);
    }

    #[test]
    fn two_step_recurrence() {
        let lr = 0.001;
        let mut adam = AdamState::new(AdamConfig::new(lr));
        let mut p = scalar_param("w", 0.0, 1.0);
        adam.step(&mut [&mut p]).unwrap();
        p.grad.data_mut()[0] = -1.0;
        adam.step(&mut [&mut p]).unwrap();

        // hand-evaluated recurrences
        let m1 = 0.1;
        let v1 = 0.001;
        let theta1 = -lr * (m1 / 0.1) / ((v1 / 0.001f64).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * -1.0;
        let v2 = 0.999 * v1 + 0.001 * 1.0;
        let c1 = 1.0 - 0.9f64 * 0.9;
        let c2 = 1.0 - 0.999f64 * 0.999;
        let theta2 = theta1 - lr * (m2 / c1) / ((v2 / c2).sqrt() + 1e-8);

        let m = adam.moments("w").unwrap();
        assert!((m.first.data()[0] - m2).abs() < 1e-12);
        assert!((m.second.data()[0] - v2).abs() < 1e-12);
        assert!((p.value.data()[0] - theta2).abs() < 1e-12);
    }

    #[test]
    fn order_of_parameters_does_not_matter() {
        let mk = || (scalar_param("a", 0.5, 0.3), scalar_param("b", -0.2, -1.5));
        let (mut a1, mut b1) = mk();
        let (mut a2, mut b2) = mk();
        let mut s1 = AdamState::new(AdamConfig::new(0.01));
        let mut s2 = AdamState::new(AdamConfig::new(0.01));
        for _ in 0..3 {
            a1.grad.data_mut()[0] = 0.3;
            b1.grad.data_mut()[0] = -1.5;
            a2.grad.data_mut()[0] = 0.3;
            b2.grad.data_mut()[0] = -1.5;
            s1.step(&mut [&mut a1, &mut b1]).unwrap();
            s2.step(&mut [&mut b2, &mut a2]).unwrap();
        }
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert!(s1.moments("b").unwrap().second.data()[0] >= 0.0);
    }
}
