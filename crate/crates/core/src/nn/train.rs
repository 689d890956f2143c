//! Shared minibatch loop.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{OptimizerConfig, OptimizerState};
use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(steps: usize, batch_size: usize, optimizer: OptimizerConfig, seed: u64) -> Self {
        Self {
            steps,
            batch_size,
            optimizer,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss over the whole training set before the first update.
    pub initial_loss: f64,
    /// Loss over the whole training set after the last update.
    pub final_loss: f64,
    /// Minibatch loss of each step.
    pub step_losses: Vec<f64>,
}

impl TrainReport {
    pub fn reduction(&self) -> f64 {
        if self.initial_loss > 0.0 {
            1.0 - self.final_loss / self.initial_loss
        } else {
            0.0
        }
    }
}

/// Runs `config.steps` updates. `step` receives the store and the batch
/// indices, accumulates gradients (already averaged over the batch) and
/// returns the batch loss. `eval` computes the full-set loss.
pub fn run_training(
    params: &mut ParamStore,
    items: usize,
    config: &TrainConfig,
    step: impl FnMut(&mut ParamStore, &[usize]) -> Result<f64>,
    eval: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<TrainReport> {
    run_training_with(params, items, config, step, eval, |_| {})
}

/// [`run_training`] with a hook applied after every optimizer update.
pub fn run_training_with(
    params: &mut ParamStore,
    items: usize,
    config: &TrainConfig,
    mut step: impl FnMut(&mut ParamStore, &[usize]) -> Result<f64>,
    mut eval: impl FnMut(&ParamStore) -> Result<f64>,
    mut after_update: impl FnMut(&mut ParamStore),
) -> Result<TrainReport> {
    if items == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::new(config.optimizer);
    let initial_loss = eval(params)?;
    let batch = config.batch_size.min(items);
    let mut step_losses = Vec::with_capacity(config.steps);
    for n in 0..config.steps {
        params.zero_grad();
        let mut idx: Vec<usize> = sample(&mut rng, items, batch).into_vec();
        idx.sort_unstable();
        let loss = step(params, &idx)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                param: format!("loss at step {n}"),
            });
        }
        step_losses.push(loss);
        opt.step(params)?;
        after_update(params);
        if n % 100 == 0 {
            log::debug!("step {n} loss {loss:.4}");
        }
    }
    let final_loss = eval(params)?;
    Ok(TrainReport {
        initial_loss,
        final_loss,
        step_losses,
    })
}
