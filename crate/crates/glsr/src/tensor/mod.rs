//! Dense rank-4 tensors and the primitive set the network is built from.
//!
//! Everything is laid out NCHW row-major in a flat buffer. Primitives come in
//! two layers: pure functions on [`Tensor`] values (in [`ops`]) and recorded,
//! differentiable versions of the same primitives on a [`graph::Graph`].
//! Reduction order inside every summation is fixed, so identical inputs give
//! bitwise-identical outputs no matter how the surrounding code is organized.

pub mod gradcheck;
pub mod graph;
pub mod ops;

use crate::error::{Error, Result};

/// Element precision of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    Single,
    Double,
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dtype::Single => write!(f, "single"),
            Dtype::Double => write!(f, "double"),
        }
    }
}

/// Element type of a [`Tensor`]: `f32` or `f64`.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + Default + Send + Sync + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::Single;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::Double;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Shape of a rank-4 tensor: (batch, channels, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub fn n(&self) -> usize {
        self.0[0]
    }
    pub fn c(&self) -> usize {
        self.0[1]
    }
    pub fn h(&self) -> usize {
        self.0[2]
    }
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.0[0], self.0[1], self.0[2], self.0[3])
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Flat offset of element (n, c, h, w).
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.0[1] + c) * self.0[2] + h) * self.0[3] + w
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.0[0], self.0[1], self.0[2], self.0[3])
    }
}

/// Dense rank-4 tensor. The carrier for every feature map in the model.
///
/// `grad`, when present, is the same length as `data` and holds the
/// reverse-mode derivative written by [`graph::Graph::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::dim(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor { shape, data: vec![T::zero(); shape.numel()], requires_grad: false, grad: None }
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor { shape, data: vec![v; shape.numel()], requires_grad: false, grad: None }
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    /// A scalar carried as a (1,1,1,1) tensor.
    pub fn scalar(v: T) -> Self {
        Self::full(Shape::new(1, 1, 1, 1), v)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.idx(n, c, h, w)]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, g: Vec<T>) {
        debug_assert_eq!(g.len(), self.data.len());
        self.grad = Some(g);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Uniform values in (-a, a), drawn in flat order. Deterministic for a
    /// fixed rng state; the draw happens in f64 so both precisions see the
    /// same sequence.
    pub fn rand_uniform<R: rand::Rng>(shape: Shape, a: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| T::from_f64(rng.gen_range(-a..a)))
            .collect();
        Tensor { shape, data, requires_grad: false, grad: None }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: self.requires_grad,
            grad: None,
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|v| v.to_f64())
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        self.map(|v| v.to_f64() as f32)
    }
}
