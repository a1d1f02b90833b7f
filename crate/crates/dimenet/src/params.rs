//! Named parameter storage. Order of insertion is the canonical order used by
//! gradients, optimizer state and checkpoints.

use indexmap::IndexMap;

use crate::error::{shape, Result};
use crate::tensor::{Scalar, Tensor};

pub const RUNNING_MEAN: &str = ".running_mean";
pub const RUNNING_VAR: &str = ".running_var";

/// Running batch-norm statistics are stored alongside the weights but are
/// not updated by the optimizer.
pub fn is_trainable(name: &str) -> bool {
    !(name.ends_with(RUNNING_MEAN) || name.ends_with(RUNNING_VAR))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self { tensors: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.tensors.get_index_of(name).ok_or_else(|| shape(format!("unknown parameter {name}")))
    }

    pub fn by_index(&self, idx: usize) -> &Tensor<T> {
        &self.tensors[idx]
    }

    pub fn by_index_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.tensors[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        self.tensors.get_index(idx).map(|(k, _)| k.as_str()).unwrap_or("")
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of scalar values in trainable tensors.
    pub fn trainable_count(&self) -> usize {
        self.iter().filter(|(n, _)| is_trainable(n)).map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Verifies that `other` has the same names, order and shapes.
    pub fn check_layout<U: Scalar>(&self, other: &ModelParams<U>) -> Result<()> {
        if self.len() != other.len() {
            return Err(shape(format!("{} tensors vs {}", self.len(), other.len())));
        }
        for ((a, ta), (b, tb)) in self.iter().zip(other.iter()) {
            if a != b || ta.dims() != tb.dims() {
                return Err(shape(format!("parameter {a} {:?} does not match {b} {:?}", ta.dims(), tb.dims())));
            }
        }
        Ok(())
    }
}

/// Gradients aligned with a `ModelParams` by index; `None` for tensors that
/// received no gradient (running statistics, unused parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &ModelParams<T>) -> Self {
        Self { grads: vec![None; params.len()] }
    }

    pub fn get(&self, idx: usize) -> Option<&Tensor<T>> {
        self.grads.get(idx).and_then(|g| g.as_ref())
    }

    pub(crate) fn accumulate(&mut self, idx: usize, dims: &[usize], f: impl FnOnce(&mut [T])) {
        let slot = &mut self.grads[idx];
        let g = slot.get_or_insert_with(|| Tensor::zeros(dims));
        f(g.data_mut());
    }

    pub fn l2_norm(&self) -> f64 {
        self.grads.iter().flatten().flat_map(|g| g.data()).map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
    }
}
