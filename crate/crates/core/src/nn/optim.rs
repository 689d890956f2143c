use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Adam,
    Adadelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    /// Global-norm gradient clipping applied before each update.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl OptimizerConfig {
    /// Adam with lr 0.001.
    pub fn adam() -> Self {
        Self {
            algorithm: Algorithm::Adam,
            learning_rate: 1e-3,
            max_grad_norm: Some(5.0),
        }
    }

    /// Adadelta with lr 1.0.
    pub fn adadelta() -> Self {
        Self {
            algorithm: Algorithm::Adadelta,
            learning_rate: 1.0,
            max_grad_norm: Some(5.0),
        }
    }

    pub fn with_lr(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADADELTA_RHO: f64 = 0.95;
const ADADELTA_EPS: f64 = 1e-6;

/// Adam or Adadelta with per-parameter accumulators. For Adam the two slots
/// are the first and second moments; for Adadelta the running averages of
/// squared gradients and squared updates.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    accumulators: BTreeMap<String, (Tensor2D, Tensor2D)>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            accumulators: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every trainable parameter, then zeroes all
    /// gradients. Fails without touching any parameter if a gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, p)| !p.grad.is_finite()) {
            return Err(Error::Divergence { param: name.clone() });
        }
        if let Some(max) = self.config.max_grad_norm {
            params.clip_grad_norm(max);
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let lr = self.config.learning_rate;
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                p.grad.fill(0.0);
                continue;
            }
            let (a, b) = self.accumulators.entry(name.clone()).or_insert_with(|| {
                (
                    Tensor2D::zeros(p.value.rows(), p.value.cols()),
                    Tensor2D::zeros(p.value.rows(), p.value.cols()),
                )
            });
            let values = p.value.as_mut_slice();
            let grads = p.grad.as_slice();
            match self.config.algorithm {
                Algorithm::Adam => {
                    let bc1 = 1.0 - ADAM_BETA1.powi(t);
                    let bc2 = 1.0 - ADAM_BETA2.powi(t);
                    for (((x, &g), m), v) in values
                        .iter_mut()
                        .zip(grads)
                        .zip(a.as_mut_slice())
                        .zip(b.as_mut_slice())
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *x -= lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
                Algorithm::Adadelta => {
                    for (((x, &g), eg), ed) in values
                        .iter_mut()
                        .zip(grads)
                        .zip(a.as_mut_slice())
                        .zip(b.as_mut_slice())
                    {
                        *eg = ADADELTA_RHO * *eg + (1.0 - ADADELTA_RHO) * g * g;
                        let delta = -((*ed + ADADELTA_EPS).sqrt() / (*eg + ADADELTA_EPS).sqrt()) * g;
                        *ed = ADADELTA_RHO * *ed + (1.0 - ADADELTA_RHO) * delta * delta;
                        *x += lr * delta;
                    }
                }
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert("x", Tensor2D::from_vec(1, 1, vec![v]).unwrap());
        s
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        for cfg in [OptimizerConfig::adam().with_lr(0.5), OptimizerConfig::adadelta()] {
            let mut s = scalar_store(0.75);
            let mut opt = OptimizerState::new(cfg);
            opt.step(&mut s).unwrap();
            assert_eq!(s.value("x").unwrap().get(0, 0), 0.75);
            assert_eq!(opt.step_count(), 1);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // m̂ = 1, v̂ = 1  =>  Δ = -lr / (1 + 1e-8)
        let mut s = scalar_store(0.0);
        s.accumulate("x", &Tensor2D::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::adam());
        opt.step(&mut s).unwrap();
        let x = s.value("x").unwrap().get(0, 0);
        assert!((x + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(s.grad("x").unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        s.accumulate("x", &Tensor2D::from_vec(1, 1, vec![f64::NAN]).unwrap()).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::adam());
        match opt.step(&mut s) {
            Err(Error::Divergence { param }) => assert_eq!(param, "x"),
            other => panic!("expected divergence, got {other:?}"),
        }
        assert_eq!(s.value("x").unwrap().get(0, 0), 1.0);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut s = scalar_store(2.0);
        s.set_trainable("x", false).unwrap();
        s.accumulate("x", &Tensor2D::from_vec(1, 1, vec![3.0]).unwrap()).unwrap();
        OptimizerState::new(OptimizerConfig::adam()).step(&mut s).unwrap();
        assert_eq!(s.value("x").unwrap().get(0, 0), 2.0);
    }
}
