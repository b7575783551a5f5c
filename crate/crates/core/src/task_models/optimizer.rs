//! SGD and Adam with per-tensor moment buffers keyed by name.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(lr)
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// Optimizer hyperparameters, step counter and Adam moments.
///
/// Call [`OptimizerState::begin_step`] once per optimisation step, then
/// [`OptimizerState::update`] for every tensor that received a gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: OptimizerConfig,
    /// Seed of the data order used with this optimizer.
    pub seed: u64,
    step: u64,
    moments: BTreeMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, seed: u64) -> Self {
        Self {
            config,
            seed,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Completed steps (the bias-correction counter).
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Apply one update to `param` in place.
    pub fn update(&mut self, key: &str, param: &mut Tensor<T>, grad: &Tensor<T>) {
        assert_eq!(param.shape(), grad.shape(), "gradient shape of {key}");
        let lr = T::lit(self.config.lr);
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                assert!(self.step > 0, "begin_step must precede update");
                let (b1, b2, eps) = (T::lit(self.config.beta1), T::lit(self.config.beta2), T::lit(self.config.eps));
                let t = i32::try_from(self.step).unwrap_or(i32::MAX);
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let n = grad.len();
                let (m, v) = self
                    .moments
                    .entry(key.to_owned())
                    .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
                for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}
