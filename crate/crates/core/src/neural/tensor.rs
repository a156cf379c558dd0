//! Dense n-dimensional tensor. Layout is row-major; images use NCHW.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar element of the tensor engine. `f32` is the training type; `f64`
/// exists for finite-difference gradient checks.
pub trait Element:
    ndarray::LinalgScalar
    + num_traits::Float
    + num_traits::NumCast
    + std::fmt::Debug
    + std::iter::Sum
    + 'static
{
    fn from_f64(v: f64) -> Self {
        num_traits::cast(v).unwrap()
    }
    fn to_f64(self) -> f64 {
        num_traits::cast(self).unwrap()
    }
}

impl Element for f32 {}
impl Element for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E = f32> {
    pub shape: Vec<usize>,
    pub data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![E::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data length mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: E) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn filled(shape: &[usize], v: E) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    /// Uniform init on [lo, hi).
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..shape.iter().product())
            .map(|_| E::from_f64(rng.gen_range(lo..hi)))
            .collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn reshaped(&self, shape: &[usize]) -> Tensor<E> {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        Tensor { shape: shape.to_vec(), data: self.data.clone() }
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_in_place(&mut self, other: &Tensor<E>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn to_f64_tensor(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| Element::to_f64(v)).collect(),
        }
    }

    pub fn from_f64_tensor(t: &Tensor<f64>) -> Tensor<E> {
        Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&v| E::from_f64(v)).collect() }
    }
}
