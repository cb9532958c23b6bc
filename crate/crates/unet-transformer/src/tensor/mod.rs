//! Dense tensors and the reverse-mode autodiff tape.

mod gradcheck;
mod tape;

pub use gradcheck::{
    analytic_grads, grad_check, numeric_grads, relative_error, GradCheckReport, DEFAULT_EPS,
    DEFAULT_TOL,
};
pub use tape::{Tape, Var};

use std::sync::Arc;

use crate::scalar::Scalar;

/// Dense, row-major tensor. The payload sits behind an `Arc`, so clones are
/// cheap and mutation copies on write; tensors are effectively immutable once
/// they enter a computation.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        let n: usize = shape.iter().product();
        assert!(
            shape.iter().all(|&e| e > 0),
            "tensor extents must be positive, got {shape:?}"
        );
        assert_eq!(
            n,
            data.len(),
            "shape {shape:?} implies {n} elements, got {}",
            data.len()
        );
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![F::ZERO; n])
    }

    pub fn full(shape: Vec<usize>, value: F) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn scalar(value: F) -> Self {
        Tensor::new(vec![1], vec![value])
    }

    /// 1-D tensor from a slice of f64 literals.
    pub fn vector(values: &[f64]) -> Self {
        Tensor::new(vec![values.len()], values.iter().map(|&v| F::of(v)).collect())
    }

    /// 2-D tensor from row-major f64 literals.
    pub fn matrix(rows: usize, cols: usize, values: &[f64]) -> Self {
        Tensor::new(
            vec![rows, cols],
            values.iter().map(|&v| F::of(v)).collect(),
        )
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    /// Mutable access; copies the payload if it is shared.
    pub fn data_mut(&mut self) -> &mut [F] {
        let v: &mut Vec<F> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.ndim(), 2, "rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.ndim(), 2, "cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    pub fn item(&self) -> F {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise map into a new tensor.
    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Cast between precisions through f64.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor::new(
            self.shape.clone(),
            self.data.iter().map(|v| G::of(v.to_f64())).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_agreement_enforced() {
        let t: Tensor<f64> = Tensor::new(vec![2, 3], vec![0.0; 6]);
        assert_eq!(t.rows(), 2);
        assert_eq!(t.cols(), 3);
        assert_eq!(t.len(), 6);
    }

    #[test]
    #[should_panic(expected = "implies 6 elements")]
    fn mismatched_data_rejected() {
        let _: Tensor<f64> = Tensor::new(vec![2, 3], vec![0.0; 5]);
    }

    #[test]
    fn clone_is_shallow_until_written() {
        let mut a: Tensor<f32> = Tensor::zeros(vec![4]);
        let b = a.clone();
        a.data_mut()[0] = 1.0;
        assert_eq!(b.data()[0], 0.0);
        assert_eq!(a.data()[0], 1.0);
    }
}
