//! Named parameter storage shared by models, the optimizer, and checkpoints.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat collection of named tensors. Names are unique and registration order
/// is the canonical parameter order everywhere (optimizer state, checkpoints).
pub struct ParamStore<F: Scalar> {
    names: Vec<String>,
    values: Vec<Tensor<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name:?}"
        );
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<F>) {
        assert_eq!(
            value.shape(),
            self.values[id.0].shape(),
            "parameter {:?} shape change {:?} -> {:?}",
            self.names[id.0],
            self.values[id.0].shape(),
            value.shape()
        );
        self.values[id.0] = value;
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.values[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total number of scalar elements across all parameters.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter())
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Clone for ParamStore<F> {
    fn clone(&self) -> Self {
        ParamStore {
            names: self.names.clone(),
            values: self.values.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut ps: ParamStore<f32> = ParamStore::new();
        let a = ps.add("w", Tensor::zeros(vec![2, 2]));
        let b = ps.add("b", Tensor::zeros(vec![2]));
        assert_eq!(ps.name(a), "w");
        assert_eq!(ps.name(b), "b");
        assert_eq!(ps.id_of("b"), Some(b));
        assert_eq!(ps.n_scalars(), 6);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicates_rejected() {
        let mut ps: ParamStore<f32> = ParamStore::new();
        ps.add("w", Tensor::zeros(vec![1]));
        ps.add("w", Tensor::zeros(vec![1]));
    }
}
