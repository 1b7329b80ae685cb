//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ParamStore, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps {} must be positive", self.eps)));
        }
        Ok(())
    }
}

/// Moment estimates for every tensor of one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Ok(Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. A non-finite
    /// gradient aborts the step before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if store.ids().any(|id| !store.grad(id).is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        if self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one, eps) = (T::one(), T::from_f64(c.eps));
        let t = self.step as i32;
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.lr);
        for ((value, grad), (m, v)) in store
            .values_and_grads_mut()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((p, &g), (mi, vi)) in it {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(1.5);
        let mut opt = Adam::new(AdamConfig::default(), &s).unwrap();
        for _ in 0..3 {
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.value(s.id("x").unwrap()).data(), &[1.5]);
    }

    #[test]
    fn nan_gradient_aborts() {
        let mut s = scalar_store(1.0);
        let id = s.id("x").unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &s).unwrap();
        s.grad_mut(id).fill(f64::NAN);
        assert!(matches!(opt.step(&mut s), Err(Error::NonFinite(_))));
        assert_eq!(s.value(id).data(), &[1.0]);
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let s = scalar_store(0.0);
        for c in [
            AdamConfig { lr: -1.0, ..Default::default() },
            AdamConfig { beta1: 1.0, ..Default::default() },
            AdamConfig { eps: 0.0, ..Default::default() },
        ] {
            assert!(matches!(Adam::new(c, &s), Err(Error::Config(_))));
        }
    }
}
