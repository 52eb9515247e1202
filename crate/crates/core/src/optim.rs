//! SGD with classic momentum, L2 regularization and the inverse-time
//! learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How per-class frequencies for loss weighting are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrequencySource {
    /// Positive frames in the preprocessed training set.
    #[default]
    Frames,
    /// Training videos containing the class at least once.
    Videos,
}

fn default_lr0() -> f64 {
    0.05
}

fn default_momentum() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    pub decay: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(default)]
    pub l2: f64,
    #[serde(default)]
    pub weighted: bool,
    #[serde(default)]
    pub frequency_source: FrequencySource,
    /// Explicit per-class frequencies; overrides counting when present.
    #[serde(default)]
    pub class_frequencies: Option<Vec<f64>>,
    pub seed: u64,
}

impl TrainConfig {
    /// Fine-tuning schedule constants: decay 0.000125, batch 8.
    pub fn fine_tune(iterations: usize, seed: u64) -> Self {
        TrainConfig {
            lr0: 0.05,
            decay: 0.000125,
            momentum: 0.9,
            batch_size: 8,
            iterations,
            l2: 0.0,
            weighted: false,
            frequency_source: FrequencySource::Frames,
            class_frequencies: None,
            seed,
        }
    }

    /// Fixed-feature-extractor schedule constants: decay 0.001, batch 32.
    pub fn fixed_extractor(iterations: usize, seed: u64) -> Self {
        TrainConfig {
            decay: 0.001,
            batch_size: 32,
            ..Self::fine_tune(iterations, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::invalid(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay >= 0.0) {
            return Err(Error::invalid(format!("decay must be non-negative, got {}", self.decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::invalid(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Learning rate at batch index `n`: `lr0 / (1 + decay * n)`.
pub fn lr_at(n: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 / (1.0 + cfg.decay * n as f64)
}

/// Heavy-ball momentum state keyed by parameter path.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub l2: f64,
    velocities: BTreeMap<String, Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, l2: f64) -> Self {
        Sgd {
            momentum,
            l2,
            velocities: BTreeMap::new(),
        }
    }

    /// One update of a single parameter:
    /// `g' = g + l2 * theta; v = momentum * v + g'; theta -= lr * v`.
    pub fn step(&mut self, path: &str, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::invalid(format!(
                "{path}: gradient shape {:?} does not match parameter {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        let v = self
            .velocities
            .entry(path.to_string())
            .or_insert_with(|| Tensor::zeros_like(param));
        for ((theta, vel), g) in param.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
            let g = g + self.l2 * *theta;
            *vel = self.momentum * *vel + g;
            *theta -= lr * *vel;
        }
        Ok(())
    }

    pub fn velocity(&self, path: &str) -> Option<&Tensor> {
        self.velocities.get(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(decay: f64) -> TrainConfig {
        TrainConfig {
            decay,
            ..TrainConfig::fine_tune(0, 0)
        }
    }

    #[test]
    fn schedule_constants() {
        assert_eq!(lr_at(0, &cfg(0.000125)), 0.05);
        assert_eq!(lr_at(1000, &cfg(0.001)), 0.025);
        assert!((lr_at(60000, &cfg(0.000125)) - 0.05 / 8.5).abs() <= 1e-15);
        assert_eq!(lr_at(12345, &cfg(0.0)), 0.05);
        let c = cfg(0.001);
        assert!((0..500).all(|n| lr_at(n + 1, &c) < lr_at(n, &c)));
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut opt = Sgd::new(0.0, 0.0);
        let mut p = Tensor::new(&[2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::new(&[2], vec![0.5, 2.0]).unwrap();
        opt.step("p", &mut p, &g, 0.1).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.1 * 0.5, -1.0 - 0.1 * 2.0]);
    }

    #[test]
    fn momentum_second_step() {
        let mut opt = Sgd::new(0.9, 0.0);
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        opt.step("p", &mut p, &g, 0.1).unwrap();
        let after_first = p.data()[0];
        opt.step("p", &mut p, &g, 0.1).unwrap();
        assert!(((after_first - p.data()[0]) - 0.1 * 1.9).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(t) = t^2 / 2, gradient t; scalar simulation of the same recursion
        let mut opt = Sgd::new(0.9, 0.0);
        let mut p = Tensor::scalar(1.0);
        let (mut t, mut v) = (1.0f64, 0.0f64);
        let mut converged_at = None;
        for step in 0..500 {
            let g = Tensor::scalar(p.data()[0]);
            opt.step("p", &mut p, &g, 0.05).unwrap();
            v = 0.9 * v + t;
            t -= 0.05 * v;
            assert_eq!(p.data()[0], t);
            if converged_at.is_none() && p.data()[0].abs() < 1e-6 && v.abs() < 1e-5 {
                converged_at = Some(step);
            }
        }
        assert!(converged_at.is_some());
        assert!(p.data()[0].abs() < 1e-6);
    }

    #[test]
    fn l2_adds_weight_decay() {
        let mut opt = Sgd::new(0.0, 0.5);
        let mut p = Tensor::scalar(2.0);
        opt.step("p", &mut p, &Tensor::scalar(0.0), 0.1).unwrap();
        assert_eq!(p.data()[0], 2.0 - 0.1 * 1.0);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut opt = Sgd::new(0.9, 0.0);
        let mut p = Tensor::zeros(&[2]);
        assert!(opt.step("p", &mut p, &Tensor::zeros(&[3]), 0.1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.001).validate().is_ok());
        assert!(TrainConfig { momentum: 1.0, ..cfg(0.0) }.validate().is_err());
        assert!(TrainConfig { lr0: 0.0, ..cfg(0.0) }.validate().is_err());
        assert!(TrainConfig { decay: -1.0, ..cfg(0.0) }.validate().is_err());
    }
}
