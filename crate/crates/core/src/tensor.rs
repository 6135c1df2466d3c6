//! Dense row-major tensors.
//!
//! Feature maps are stored as `[batch, channels, height, width]`. A single
//! feature map uses batch 1; a stack of transition states uses the batch
//! axis for the state index.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor::from_vec", &[n], &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(batch, channels, height, width)` of a 4-D tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected a 4-D tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("Tensor::reshape", &[self.data.len()], &[n]));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, s: T) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    /// Contiguous slice of entry `index` along axis 0.
    pub fn outer(&self, index: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0];
        &self.data[index * stride..(index + 1) * stride]
    }

    /// Copy of entries `start..start+len` along axis 0.
    pub fn slice_outer(&self, start: usize, len: usize) -> Self {
        let stride = self.data.len() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = len;
        Self {
            shape,
            data: self.data[start * stride..(start + len) * stride].to_vec(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::from_f64_lossy(x.as_f64())).collect(),
        }
    }

    /// 2-D view helper: element `(row, col)` of an `h x w` plane.
    #[inline]
    pub fn at2(&self, row: usize, col: usize) -> T {
        let w = *self.shape.last().unwrap();
        self.data[row * w + col]
    }
}

/// Concatenate 4-D tensors along axis 0 (state axis).
pub fn concat_outer<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Empty("concat of zero tensors".into()))?;
    let tail = &first.shape()[1..];
    let mut outer = 0;
    let mut data = Vec::new();
    for p in parts {
        if &p.shape()[1..] != tail {
            return Err(Error::shape("concat_outer", first.shape(), p.shape()));
        }
        outer += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![outer];
    shape.extend_from_slice(tail);
    Tensor::from_vec(&shape, data)
}
