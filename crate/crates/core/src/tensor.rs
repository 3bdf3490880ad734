//! Dense row-major n-dimensional array.

use std::ops::{Index, IndexMut};

use crate::scalar::Real;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were given")]
    Length { shape: Vec<usize>, expected: usize, actual: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    Mismatch { left: Vec<usize>, right: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self, ShapeError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(ShapeError::Length { shape, expected, actual: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            debug_assert!(ix < dim, "index {ix} out of bounds for axis {i} of size {dim}");
            off = off * dim + ix;
        }
        off
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, ShapeError> {
        Self::from_vec(shape, self.data)
    }

    pub fn map<U: Copy, F: Fn(T) -> U>(&self, f: F) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn ensure_same_shape<U>(&self, other: &Tensor<U>) -> Result<(), ShapeError> {
        if self.shape != other.shape {
            return Err(ShapeError::Mismatch { left: self.shape.clone(), right: other.shape.clone() });
        }
        Ok(())
    }

    pub fn zip_with<U: Copy, V: Copy, F: Fn(T, U) -> V>(
        &self,
        other: &Tensor<U>,
        f: F,
    ) -> Result<Tensor<V>, ShapeError> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|v| U::of(v.as_f64()))
    }

    /// Channel sub-block of a channel-first tensor `[C, ...]`.
    pub fn channels(&self, range: std::ops::Range<usize>) -> Tensor<T> {
        let per = self.shape[1..].iter().product::<usize>();
        let mut shape = self.shape.clone();
        shape[0] = range.len();
        Tensor { shape, data: self.data[range.start * per..range.end * per].to_vec() }
    }

    /// Concatenate channel-first tensors along axis 0.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Tensor<T>, ShapeError> {
        let first = parts.first().expect("at least one part");
        let spatial = &first.shape[1..];
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != spatial {
                return Err(ShapeError::Mismatch { left: first.shape.clone(), right: p.shape.clone() });
            }
            channels += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(spatial);
        Ok(Tensor { shape, data })
    }
}

impl<T: Copy> Index<&[usize]> for Tensor<T> {
    type Output = T;
    fn index(&self, index: &[usize]) -> &T {
        &self.data[self.offset(index)]
    }
}

impl<T: Copy> IndexMut<&[usize]> for Tensor<T> {
    fn index_mut(&mut self, index: &[usize]) -> &mut T {
        let off = self.offset(index);
        &mut self.data[off]
    }
}
