//! Dense f64 tensors with a dynamic reverse-mode tape.
//!
//! Tensors are row-major; every op works on at most two dimensions. A 1-D
//! tensor of length `n` behaves as a `1 × n` row and a scalar has shape `[]`.
//! The only broadcasting is scalar-with-tensor in the elementwise ops, plus
//! the explicit row-vector ops ([`Tape::add_row`], [`Tape::mul_row`]).

pub mod checkpoint;
mod gradcheck;
pub(crate) mod kernels;
mod tape;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub use gradcheck::{grad_check, grad_check_many, GradCheckReport};
pub use tape::{Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    InvalidShape { op: &'static str, shape: Vec<usize>, reason: String },
    #[error("{op}: index {index} out of range for size {bound}")]
    IndexOutOfRange { op: &'static str, index: usize, bound: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// `(rows, cols)` view of a shape of rank at most two.
pub(crate) fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize), TensorError> {
    match *shape {
        [] => Ok((1, 1)),
        [n] => Ok((1, n)),
        [r, c] => Ok((r, c)),
        _ => Err(TensorError::InvalidShape { op, shape: shape.to_vec(), reason: "rank above 2".into() }),
    }
}

/// A dense tensor with an optional accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self, TensorError> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(TensorError::DataLength { shape, len: data.len() });
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor { shape, data: vec![0.0; n], grad: None }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let mut t = Tensor::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { shape: Vec::new(), data: vec![value], grad: None }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { shape: vec![data.len()], data, grad: None }
    }

    /// Samples i.i.d. `N(0, std²)` entries.
    pub fn randn(shape: impl Into<Vec<usize>>, std: f64, rng: &mut impl Rng) -> Self {
        let mut t = Tensor::zeros(shape);
        for x in &mut t.data {
            let z: f64 = rng.sample(StandardNormal);
            *x = z * std;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the stored gradient, creating it on first use.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<(), TensorError> {
        if g.len() != self.data.len() {
            return Err(TensorError::DataLength { shape: self.shape.clone(), len: g.len() });
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}
