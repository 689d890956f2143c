use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor2D,
    pub grad: Tensor2D,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Tensor2D) -> Self {
        let grad = Tensor2D::zeros(value.rows(), value.cols());
        Self {
            value,
            grad,
            trainable: true,
        }
    }
}

/// Named parameter tensors, each with a same-shape gradient slot.
///
/// Iteration order is lexicographic by name, which keeps optimizer updates,
/// gradient norms and checkpoints deterministic.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    rng_seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params && self.rng_seed == other.rng_seed
    }
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            rng_seed,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Registers `name` with weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn init_uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        self.init_range(name, rows, cols, bound);
    }

    /// Registers `name` with weights uniform in [-bound, bound].
    pub fn init_range(&mut self, name: &str, rows: usize, cols: usize, bound: f64) {
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..=bound))
            .collect();
        let value = Tensor2D::from_vec(rows, cols, data).expect("shape computed from rows*cols");
        self.params.insert(name.to_string(), Param::new(value));
    }

    pub fn insert(&mut self, name: &str, value: Tensor2D) {
        self.params.insert(name.to_string(), Param::new(value));
    }

    pub fn insert_param(&mut self, name: &str, param: Param) {
        self.params.insert(name.to_string(), param);
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.remove(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingArtifact(format!("parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingArtifact(format!("parameter `{name}`")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2D> {
        Ok(&self.get(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2D> {
        Ok(&mut self.get_mut(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor2D> {
        Ok(&self.get(name)?.grad)
    }

    /// Adds `delta` into the gradient slot of `name`.
    pub fn accumulate(&mut self, name: &str, delta: &Tensor2D) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.grad.shape() != delta.shape() {
            return Err(Error::dims(
                format!("gradient for `{name}`"),
                format!("{:?}", p.grad.shape()),
                format!("{:?}", delta.shape()),
            ));
        }
        p.grad.add_assign(delta);
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)?.trainable = trainable;
        Ok(())
    }

    /// Marks every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.grad.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all trainable gradients so their global L2 norm is at most
    /// `max_norm`. Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm.is_finite() {
            let s = max_norm / norm;
            for p in self.params.values_mut().filter(|p| p.trainable) {
                p.grad.scale(s);
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.is_finite())
    }

    /// Copies parameter values (not gradients) whose names exist in both.
    pub fn copy_values_from(&mut self, other: &ParamStore) {
        for (name, p) in self.params.iter_mut() {
            if let Some(src) = other.params.get(name) {
                if src.value.shape() == p.value.shape() {
                    p.value = src.value.clone();
                }
            }
        }
    }

    /// Re-seeds the internal generator, used when a store is reloaded.
    pub fn reseed(&mut self, seed: u64) {
        self.rng_seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}
