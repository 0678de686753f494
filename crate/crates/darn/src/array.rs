//! Plain dense n-dimensional array, row-major.
//!
//! This is the passive value container used for parameters, gradients and
//! checkpoints. Differentiable computation lives in [`crate::tensor`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Array {
            shape,
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Array {
            shape,
            data: vec![value; numel],
        }
    }

    /// Rank-0 array holding one value.
    pub fn scalar(value: T) -> Self {
        Array {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Lossy cast between scalar types (f32 <-> f64).
    pub fn cast<U: Scalar>(&self) -> Array<U> {
        self.map(|v| U::of_f64(v.as_f64()))
    }
}

/// Flat offset of `(b, c, y, x)` in a `[B, C, H, W]` array.
#[inline(always)]
pub fn idx4(c_extent: usize, h: usize, w: usize, b: usize, c: usize, y: usize, x: usize) -> usize {
    ((b * c_extent + c) * h + y) * w + x
}
