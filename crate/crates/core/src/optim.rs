//! Adam with bias-corrected moments.

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self { lr, beta1, beta2, eps: 1e-8 }
    }
}

/// Per-parameter moment buffers and the step counter.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter from its accumulated gradient. Fails
    /// without touching anything if a gradient is not finite.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::ShapeMismatch { expected: vec![self.m.len()], got: vec![params.len()] });
        }
        for (p, m) in params.iter().zip(&self.m) {
            if p.grad.len() != m.len() || p.value.numel() != m.len() {
                return Err(Error::ShapeMismatch { expected: vec![m.len()], got: vec![p.grad.len()] });
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for ((p, m), v) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let grad = &p.grad;
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, Network, NetworkSpec};
    use crate::tensor::Tensor;

    fn scalar_param(v: f64) -> Network<f64> {
        let spec = NetworkSpec::new(&[1], vec![LayerSpec::Dense { inputs: 1, outputs: 1 }]);
        Network::from_named(spec, vec![("0.weight".into(), Tensor::new(&[1, 1], vec![v]).unwrap()), ("0.bias".into(), Tensor::zeros(&[1]).unwrap())]).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut net = scalar_param(0.0);
        net.params_mut()[0].grad[0] = 1.0;
        let mut adam = Adam::new(AdamConfig::new(0.01, 0.9, 0.999));
        adam.step(&mut net.params_mut()).unwrap();
        let w = net.params().next().unwrap().value.data()[0];
        assert!((w + 0.01).abs() < 1e-9, "{w}");
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_and_zero_lr_are_identity() {
        let mut net = scalar_param(0.7);
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.9, 0.999));
        adam.step(&mut net.params_mut()).unwrap();
        assert_eq!(net.params().next().unwrap().value.data()[0], 0.7);
        net.params_mut()[0].grad[0] = 3.0;
        let mut frozen = Adam::new(AdamConfig::new(0.0, 0.9, 0.999));
        frozen.step(&mut net.params_mut()).unwrap();
        assert_eq!(net.params().next().unwrap().value.data()[0], 0.7);
    }

    #[test]
    fn descends_a_parabola() {
        let mut net = scalar_param(1.0);
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.9, 0.999));
        for _ in 0..50 {
            let p = net.params().next().unwrap().value.data()[0];
            net.params_mut()[0].grad[0] = 2.0 * p;
            adam.step(&mut net.params_mut()).unwrap();
        }
        let p = net.params().next().unwrap().value.data()[0];
        assert!(p.abs() < 0.5, "{p}");
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut net = scalar_param(1.0);
        net.params_mut()[1].grad[0] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::new(0.1, 0.9, 0.999));
        assert!(matches!(adam.step(&mut net.params_mut()), Err(Error::NonFiniteGradient(name)) if name == "0.bias"));
        assert_eq!(adam.steps(), 0);
        assert_eq!(net.params().next().unwrap().value.data()[0], 1.0);
    }
}
