//! Named trainable tensors with per-parameter gradient accumulators.

use crate::error::{Error, Result};
use crate::numerics::tape::{Gradients, Tape, TensorId};
use crate::numerics::tensor::{Real, Tensor};
use rand::Rng;
use std::collections::HashMap;

/// Ordered map name → tensor. Insertion order is the canonical order used
/// by the checkpoint manifest and the optimizer.
pub struct ParameterStore<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            names: Vec::new(),
            tensors: Vec::new(),
            grads: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(tensor.shape().to_vec()));
        self.tensors.push(tensor);
        Ok(())
    }

    /// Insert a tensor with values drawn uniformly from [-scale, scale).
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        scale: f64,
        rng: &mut R,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| T::from_f64(rng.gen_range(-scale..scale)))
            .collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    /// Insert a fan-in-scaled weight: uniform(-a, a) with a = sqrt(6/fan_in),
    /// where fan_in is the first dimension of an (in x out) matrix. Keeps
    /// forward magnitudes stable through stacked layers.
    pub fn insert_fan_in<R: Rng>(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        rng: &mut R,
    ) -> Result<()> {
        let fan_in = *shape.first().unwrap_or(&1);
        let scale = (6.0 / fan_in.max(1) as f64).sqrt();
        self.insert_uniform(name, shape, scale, rng)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_required(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    /// Replace a parameter's values; the shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let i = *self.index.get(name).ok_or_else(|| Error::UnknownParameter(name.into()))?;
        if self.tensors[i].shape() != tensor.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParameterStore::set",
                detail: format!("{}: {:?} -> {:?}", name, self.tensors[i].shape(), tensor.shape()),
            });
        }
        self.tensors[i] = tensor;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.grads[i])
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.iter_mut() {
            for v in g.data_mut() {
                *v = T::zero();
            }
        }
    }

    pub fn add_grad(&mut self, name: &str, delta: &Tensor<T>) -> Result<()> {
        let i = *self.index.get(name).ok_or_else(|| Error::UnknownParameter(name.into()))?;
        if self.grads[i].shape() != delta.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParameterStore::add_grad",
                detail: format!("{}: {:?} vs {:?}", name, self.grads[i].shape(), delta.shape()),
            });
        }
        for (a, b) in self.grads[i].data_mut().iter_mut().zip(delta.data()) {
            *a += *b;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Parameter/gradient pairs in canonical order, for the optimizer.
    pub fn iter_with_grads_mut(
        &mut self,
    ) -> impl Iterator<Item = (&str, &mut Tensor<T>, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter_mut())
            .zip(self.grads.iter())
            .map(|((n, t), g)| (n, t, g))
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for (name, t) in self.iter() {
            out.insert(name, t.cast()).expect("names unique by construction");
        }
        out
    }

    /// Register every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<BoundParams> {
        let mut ids = Vec::with_capacity(self.names.len());
        for (name, t) in self.iter() {
            let id = tape.leaf(t.clone())?;
            ids.push((name.to_string(), id));
        }
        Ok(BoundParams { ids })
    }

    /// Pull gradients off a finished backward pass into the accumulators.
    pub fn accumulate_bound(&mut self, bound: &BoundParams, grads: &Gradients<T>) -> Result<()> {
        for (name, id) in &bound.ids {
            if let Some(g) = grads.get(*id) {
                self.add_grad(name, g)?;
            }
        }
        Ok(())
    }

    /// Total number of scalar values across all parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Tape handles for every parameter of a store, by name.
pub struct BoundParams {
    ids: Vec<(String, TensorId)>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.ids
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TensorId)> {
        self.ids.iter().map(|(n, id)| (n.as_str(), *id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::<f64>::new();
        s.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(matches!(s.insert("w", Tensor::zeros(vec![2])), Err(Error::DuplicateParameter(_))));
    }

    #[test]
    fn grad_shape_must_match() {
        let mut s = ParameterStore::<f64>::new();
        s.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(s.add_grad("w", &Tensor::zeros(vec![3])).is_err());
        s.add_grad("w", &Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        s.add_grad("w", &Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(s.grad("w").unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn insertion_order_is_canonical() {
        let mut s = ParameterStore::<f32>::new();
        s.insert("z", Tensor::zeros(vec![1])).unwrap();
        s.insert("a", Tensor::zeros(vec![1])).unwrap();
        assert_eq!(s.names(), &["z".to_string(), "a".to_string()]);
    }
}
