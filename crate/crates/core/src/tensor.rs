//! Dense row-major tensors.
//!
//! `Tensor<f32>` is the storage type for everything that trains; `Tensor<f64>`
//! exists so gradients can be checked against finite differences without
//! drowning in rounding noise.

use std::fmt::Debug;

use num_traits::Float;

use crate::error::{bail, Result};

/// Element type of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            bail!(Dimension, "zero extent in shape {shape:?}");
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            bail!(Dimension, "shape {shape:?} needs {len} values, got {}", data.len());
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..len).map(&mut f).collect() }
    }

    /// Builds a tensor from `f64` values, casting each element.
    pub fn from_f64s(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            bail!(Usage, "item() on tensor of shape {:?}", self.shape);
        }
        Ok(self.data[0])
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => bail!(Dimension, "expected rank-4 tensor, got shape {:?}", self.shape),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [n, d] => Ok((n, d)),
            _ => bail!(Dimension, "expected rank-2 tensor, got shape {:?}", self.shape),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.iter().any(|&d| d == 0) {
            bail!(Dimension, "cannot reshape {:?} into {shape:?}", self.shape);
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if !self.is_finite() {
            bail!(Numeric, "non-finite value in {what}");
        }
        Ok(())
    }

    /// Sum of all elements, accumulated left to right.
    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub(crate) fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            bail!(Dimension, "shape mismatch: {:?} vs {:?}", self.shape, other.shape);
        }
        Ok(())
    }

    /// Stacks tensors of identical shape along a new leading axis, or along
    /// the existing leading axis when every input has extent 1 there.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = items.first() else {
            bail!(Dimension, "cannot stack zero tensors");
        };
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            first.same_shape(t)?;
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        if shape.first() == Some(&1) && shape.len() > 1 {
            shape[0] = items.len();
        } else {
            shape.insert(0, items.len());
        }
        Self::new(&shape, data)
    }

    /// The `i`-th entry along the leading axis, keeping that axis with extent 1.
    pub fn select0(&self, i: usize) -> Result<Self> {
        let Some(&n) = self.shape.first() else {
            bail!(Dimension, "select0 on a scalar");
        };
        if i >= n {
            bail!(Dimension, "index {i} out of range for leading extent {n}");
        }
        let stride = self.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Self::new(&shape, self.data[i * stride..(i + 1) * stride].to_vec())
    }
}
