//! AMSGrad with bias-corrected moments.

use std::collections::HashMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmsGradConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AmsGradConfig {
    pub fn with_lr(lr: f64) -> Self {
        AmsGradConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Running elementwise maximum of `v`.
    pub v_max: Vec<f64>,
}

/// Optimizer state over a fixed set of named parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AmsGrad {
    config: AmsGradConfig,
    step: u64,
    names: Vec<String>,
    slots: Vec<Moments>,
    index: HashMap<String, usize>,
}

impl AmsGrad {
    /// Registers buffers for `params` (name and element count).
    pub fn new<'a>(config: AmsGradConfig, params: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let mut names = Vec::new();
        let mut slots = Vec::new();
        let mut index = HashMap::new();
        for (name, n) in params {
            index.insert(name.to_string(), names.len());
            names.push(name.to_string());
            slots.push(Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                v_max: vec![0.0; n],
            });
        }
        AmsGrad {
            config,
            step: 0,
            names,
            slots,
            index,
        }
    }

    pub fn config(&self) -> &AmsGradConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.index.get(name).map(|&i| &self.slots[i])
    }

    /// Applies one update. Every gradient must name a registered
    /// parameter; `params` is searched by name.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &[(String, Tensor)]) -> Result<()> {
        let slot_ids = grads
            .iter()
            .map(|(n, _)| self.index.get(n).copied().ok_or_else(|| Error::MissingState(n.clone())))
            .collect::<Result<Vec<_>>>()?;

        self.step += 1;
        let AmsGradConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for ((name, g), slot) in grads.iter().zip(slot_ids) {
            let target = params
                .iter_mut()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::MissingState(name.clone()))?;
            let theta = target.1.data_mut();
            let s = &mut self.slots[slot];
            if theta.len() != g.numel() || s.m.len() != g.numel() {
                return Err(Error::shape("amsgrad", format!("gradient for `{name}` has wrong size")));
            }
            for (k, &gk) in g.data().iter().enumerate() {
                s.m[k] = beta1 * s.m[k] + (1.0 - beta1) * gk;
                s.v[k] = beta2 * s.v[k] + (1.0 - beta2) * gk * gk;
                s.v_max[k] = s.v_max[k].max(s.v[k]);
                let m_hat = s.m[k] / bc1;
                let v_hat = s.v_max[k] / bc2;
                theta[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(opt: &mut AmsGrad, theta: &mut Tensor, g: f64) {
        let grads = vec![("p".to_string(), Tensor::full([1], g))];
        opt.step(&mut [("p".to_string(), theta)], &grads).unwrap();
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = AmsGrad::new(AmsGradConfig::with_lr(0.01), [("p", 1)]);
        let mut theta = Tensor::zeros([1]);
        run(&mut opt, &mut theta, 1.0);
        // m̂ = 1, v̂ = 1  =>  Δ = -0.01 / (1 + 1e-8)
        assert!((theta.item() + 0.01 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut opt = AmsGrad::new(AmsGradConfig::with_lr(0.01), [("p", 1)]);
        let mut theta = Tensor::full([1], 3.0);
        run(&mut opt, &mut theta, 0.0);
        assert_eq!(theta.item(), 3.0);
    }

    #[test]
    fn max_second_moment_ignores_smaller_gradients() {
        let mut opt = AmsGrad::new(AmsGradConfig::with_lr(0.01), [("p", 1)]);
        let mut theta = Tensor::zeros([1]);
        run(&mut opt, &mut theta, 10.0);
        let before = opt.moments("p").unwrap().v_max[0];
        run(&mut opt, &mut theta, 0.0);
        let m = opt.moments("p").unwrap();
        assert_eq!(m.v_max[0], before);
        assert!(m.v[0] < before);
    }

    #[test]
    fn unknown_parameter_is_missing_state() {
        let mut opt = AmsGrad::new(AmsGradConfig::with_lr(0.01), [("p", 1)]);
        let mut theta = Tensor::zeros([1]);
        let grads = vec![("q".to_string(), Tensor::zeros([1]))];
        let err = opt.step(&mut [("q".to_string(), &mut theta)], &grads);
        assert!(matches!(err, Err(Error::MissingState(n)) if n == "q"));
        assert_eq!(opt.step_count(), 0);
    }
}
