use std::sync::Arc;

use rand::Rng;

use crate::element::Element;
use crate::error::{Error, Result};

/// Dense n-dimensional array. The buffer is shared (`Arc`), so clones and
/// zero-copy reshapes are cheap; mutation goes through [`Tensor::data_mut`]
/// which copies only when the buffer is aliased.
///
/// Gradient participation is declared when a tensor is bound to a [`Tape`]
/// (see [`Tape::leaf`]); gradients come back from [`Tape::backward`].
///
/// [`Tape`]: crate::tape::Tape
/// [`Tape::leaf`]: crate::tape::Tape::leaf
/// [`Tape::backward`]: crate::tape::Tape::backward
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::arg("tensor", format!("zero-length axis in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {:?} needs {} elements, buffer holds {}", shape, numel, data.len()),
            ));
        }
        Ok(Self { shape, data: Arc::new(data) })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![T::zero(); numel]) }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: Arc::new(vec![value; numel]) }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: Arc::new(vec![value]) }
    }

    pub fn from_slice(shape: &[usize], data: &[T]) -> Result<Self> {
        Self::new(shape.to_vec(), data.to_vec())
    }

    /// N(0, std^2) initialization.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::standard_normal(rng) * T::of_f64(std))
            .collect();
        Self { shape: shape.to_vec(), data: Arc::new(data) }
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

    /// Mutable access; copies the buffer if it is shared.
    pub fn data_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Zero-copy view with a new shape of identical element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} ({} elements) as {:?} ({})", self.shape, self.numel(), shape, numel),
            ));
        }
        Ok(Self { shape: shape.to_vec(), data: Arc::clone(&self.data) })
    }

    /// Value of a 1-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-count preserving precision change.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data.iter().map(|v| U::of_f64(v.as_f64())).collect();
        Tensor { shape: self.shape.clone(), data: Arc::new(data) }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self { shape: self.shape.clone(), data: Arc::new(data) }
    }

    /// Max over |a - b|; shapes must already agree.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}
