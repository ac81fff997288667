//! Dense row-major tensors and the reverse-mode tape that differentiates them.
//!
//! A [`Tensor`] is an immutable value: a shape plus a shared data buffer.
//! Differentiable computation happens on a [`Tape`], which records every
//! operation applied to [`Var`] handles and replays them in reverse during
//! [`Tape::backward`]. Image tensors use NCHW order.

mod gradcheck;
pub mod kernels;
mod rng;
mod tape;

use std::sync::Arc;

pub use gradcheck::{grad_check, relative_error};
pub use rng::Rng;
pub use tape::{Activation, NormStats, Tape, Var};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(Error::ShapeMismatch { expected: shape.to_vec(), got: vec![data.len()] });
        }
        Ok(Self { shape: shape.to_vec(), data: Arc::new(data) })
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self { shape: shape.to_vec(), data: Arc::new(vec![value; n]) })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: Arc::new(vec![value]) }
    }

    /// Shape `[n]` tensor holding `values`.
    pub fn from_slice(values: &[T]) -> Result<Self> {
        Self::new(&[values.len()], values.to_vec())
    }

    /// I.i.d. standard normal entries.
    pub fn randn(shape: &[usize], rng: &mut Rng) -> Result<Self> {
        Self::randn_scaled(shape, T::zero(), T::one(), rng)
    }

    /// I.i.d. normal entries with the given mean and standard deviation.
    pub fn randn_scaled(shape: &[usize], mean: T, std: T, rng: &mut Rng) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = (0..n).map(|_| mean + std * T::lit(rng.normal())).collect();
        Ok(Self { shape: shape.to_vec(), data: Arc::new(data) })
    }

    /// I.i.d. uniform entries in `[lo, hi)`.
    pub fn rand_uniform(shape: &[usize], lo: T, hi: T, rng: &mut Rng) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = (0..n).map(|_| lo + (hi - lo) * T::lit(rng.uniform())).collect();
        Ok(Self { shape: shape.to_vec(), data: Arc::new(data) })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<T> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.numel() {
            return Err(Error::IncompatibleShapes { lhs: self.shape.clone(), rhs: shape.to_vec() });
        }
        Ok(Self { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape.clone()));
        }
        Ok(self.data[0])
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_outer(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.shape[0] {
            return Err(Error::ShapeMismatch { expected: self.shape.clone(), got: vec![start, end] });
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self { shape, data: Arc::new(self.data[start * inner..end * inner].to_vec()) })
    }

    /// Stacks the given rows (indices along the leading axis) into a new tensor.
    pub fn gather_outer(&self, indices: &[usize]) -> Result<Self> {
        let inner: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            if i >= self.shape[0] {
                return Err(Error::AxisOutOfRange { axis: i, rank: self.shape[0] });
            }
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self::new(&shape, data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: Arc::new(self.data.iter().map(|&v| f(v)).collect()) }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts every element to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: Arc::new(self.data.iter().map(|v| U::lit(v.as_f64())).collect()) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_fills_every_element() {
        assert_eq!(Tensor::<f32>::full(&[2, 2], 0.0).unwrap().data(), &[0.0; 4]);
        assert_eq!(Tensor::<f32>::full(&[1], 1.0).unwrap().data(), &[1.0]);
        let t = Tensor::<f32>::full(&[3, 1, 2], 0.5).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(t.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(Tensor::<f32>::full(&[2, 0], 1.0), Err(Error::InvalidShape(_))));
        assert!(matches!(Tensor::<f32>::zeros(&[]), Err(Error::InvalidShape(_))));
        assert!(Tensor::<f32>::new(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn randn_is_reproducible() {
        let a = Tensor::<f32>::randn(&[100], &mut Rng::new(11)).unwrap();
        let b = Tensor::<f32>::randn(&[100], &mut Rng::new(11)).unwrap();
        assert_eq!(a.numel(), 100);
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn randn_moments() {
        let t = Tensor::<f64>::randn(&[100_000], &mut Rng::new(2024)).unwrap();
        let n = t.numel() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn data_mut_does_not_alias_clones() {
        let a = Tensor::<f32>::zeros(&[3]).unwrap();
        let mut b = a.clone();
        b.data_mut()[0] = 5.0;
        assert_eq!(a.data()[0], 0.0);
        assert_eq!(b.data()[0], 5.0);
    }

    #[test]
    fn reshape_keeps_data() {
        let a = Tensor::<f32>::new(&[2, 3], (0..6).map(|v| v as f32).collect()).unwrap();
        let b = a.reshape(&[3, 2]).unwrap();
        assert_eq!(b.shape(), &[3, 2]);
        assert_eq!(a.data(), b.data());
        assert!(a.reshape(&[4]).is_err());
    }

    #[test]
    fn gather_and_slice_rows() {
        let a = Tensor::<f32>::new(&[3, 2], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        assert_eq!(a.gather_outer(&[2, 0]).unwrap().data(), &[4., 5., 0., 1.]);
        assert_eq!(a.slice_outer(1, 3).unwrap().data(), &[2., 3., 4., 5.]);
    }
}
