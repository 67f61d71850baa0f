use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{NnError, Result};
use crate::graph::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named trainable tensors, iterated in lexicographic name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    grads_populated: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name.to_string(), Param { value, grad });
        Ok(())
    }

    /// Inserts a tensor drawn from `U(-scale, scale)`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) -> Result<()> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.grad)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Adds gradients from one backward pass. Contributions accumulate until [`zero_grad`](Self::zero_grad).
    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.params() {
            let p = self
                .entries
                .get_mut(name)
                .ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
            if p.grad.shape() != g.shape() {
                return Err(NnError::Shape {
                    op: "accumulate",
                    expected: p.grad.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        self.grads_populated = true;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
        self.grads_populated = false;
    }

    /// Whether any backward contribution has been accumulated since the last reset.
    pub fn grads_populated(&self) -> bool {
        self.grads_populated
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let k = max_norm / norm;
            for p in self.entries.values_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= k);
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.value.all_finite())
    }
}
