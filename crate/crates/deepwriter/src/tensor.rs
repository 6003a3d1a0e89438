//! Dense row-major tensors and the few whole-tensor operations the rest of
//! the engine composes.

use ndarray::LinalgScalar;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DwError, Result};

/// Scalar types the engine runs on. Training defaults to `f32`; gradient
/// verification runs in `f64`.
pub trait Scalar: LinalgScalar + Float + Send + Sync + std::fmt::Debug + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    /// One draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// One draw from U[0, 1).
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f32>()
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.gen::<f64>()
    }
}

/// Dense N-dimensional array, flat row-major storage. Index order matches
/// `dims` order; this single layout is what makes checkpoints bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(DwError::Shape(format!(
                "invalid tensor dims {dims:?}: must be non-empty with every dim >= 1"
            )));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(DwError::Shape(format!(
                "dims {dims:?} imply {expected} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n: usize = dims.iter().product();
        assert!(!dims.is_empty() && n > 0, "invalid dims {dims:?}");
        Tensor {
            dims,
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(dims: Vec<usize>, value: T) -> Self {
        let mut t = Self::zeros(dims);
        t.data.fill(value);
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // invariant: every dim >= 1
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the flat data under new dims of the same total length.
    pub fn reshaped(mut self, dims: Vec<usize>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if dims.is_empty() || expected != self.data.len() {
            return Err(DwError::Shape(format!(
                "cannot reshape {:?} ({} elements) to {dims:?}",
                self.dims,
                self.data.len()
            )));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element-by-element to another scalar type (through f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(Scalar::to_f64(v)))
                .collect(),
        }
    }
}

/// Element-wise sum of two same-shaped tensors (the stream fusion primitive).
pub fn elementwise_sum<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.dims() != b.dims() {
        return Err(DwError::Shape(format!(
            "elementwise_sum dims mismatch: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| x + y)
        .collect();
    Ok(Tensor {
        dims: a.dims.clone(),
        data,
    })
}

/// Smallest index of the maximum entry of a rank-1 tensor. Ties break to the
/// lowest index so predictions stay deterministic.
pub fn argmax<T: Scalar>(v: &Tensor<T>) -> Result<usize> {
    if v.rank() != 1 {
        return Err(DwError::Domain(format!(
            "argmax expects a rank-1 tensor, got dims {:?}",
            v.dims()
        )));
    }
    let mut best = 0usize;
    for (i, &x) in v.as_slice().iter().enumerate() {
        if x > v.as_slice()[best] {
            best = i;
        }
    }
    Ok(best)
}
