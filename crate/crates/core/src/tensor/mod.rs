//! Dense row-major tensors.
//!
//! Shapes are explicit `Vec<usize>` (rank 0 = scalar), storage is a flat
//! row-major buffer. Every operation validates shapes and reports both sides
//! of a mismatch. Construction of non-finite values is rejected up front;
//! debug builds additionally scan op outputs.

pub mod io;
pub mod ops;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn shape_string(shape: &[usize]) -> String {
    format!("{shape:?}")
}

impl<S: Scalar> TensorBase<S> {
    /// Builds a tensor, validating element count and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if numel_of(&shape) != data.len() {
            return Err(Error::shape(
                "new",
                format!("{} elements for shape {shape:?}", numel_of(&shape)),
                format!("{}", data.len()),
            ));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite element {x} in tensor of shape {shape:?}"
            )));
        }
        Ok(TensorBase { shape, data })
    }

    /// Internal constructor for op outputs; skips the finite scan in release
    /// builds but keeps it in debug/test builds.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        debug_assert!(
            data.iter().all(|x| x.is_finite()),
            "op produced a non-finite value in shape {shape:?}"
        );
        TensorBase { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        TensorBase {
            shape: shape.to_vec(),
            data: vec![S::zero(); numel_of(shape)],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        TensorBase {
            shape: shape.to_vec(),
            data: vec![S::one(); numel_of(shape)],
        }
    }

    pub fn full(shape: &[usize], x: S) -> Result<Self> {
        Self::new(shape.to_vec(), vec![x; numel_of(shape)])
    }

    /// Rank-0 scalar tensor.
    pub fn scalar(x: S) -> Result<Self> {
        Self::new(vec![], vec![x])
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

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::shape(
                "item",
                "1 element",
                shape_string(&self.shape),
            ));
        }
        Ok(self.data[0])
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    pub fn at(&self, idx: &[usize]) -> S {
        debug_assert_eq!(idx.len(), self.rank());
        let strides = self.strides();
        let flat: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        self.data[flat]
    }

    /// Size of the leading dimension (rows for a matrix), 1 for rank 0.
    pub fn dim0(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Product of all dimensions after the first.
    pub fn row_numel(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            numel_of(&self.shape[1..])
        }
    }

    /// Size of the trailing dimension, 1 for rank 0.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        TensorBase::from_op(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip(&self, other: &Self, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                shape_string(&self.shape),
                shape_string(&other.shape),
            ));
        }
        Ok(TensorBase::from_op(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn div(&self, other: &Self) -> Result<Self> {
        if other.data.iter().any(|x| *x == S::zero()) {
            return Err(Error::numeric("division by zero element"));
        }
        self.zip(other, "div", |a, b| a / b)
    }

    pub fn add_scalar(&self, c: S) -> Self {
        self.map(|x| x + c)
    }

    pub fn mul_scalar(&self, c: S) -> Self {
        self.map(|x| x * c)
    }

    pub fn neg(&self) -> Self {
        self.map(|x| -x)
    }

    pub fn exp(&self) -> Self {
        self.map(|x| x.exp())
    }

    pub fn square(&self) -> Self {
        self.map(|x| x * x)
    }

    pub fn abs(&self) -> Self {
        self.map(|x| x.abs())
    }

    /// Exact GELU: `x * Phi(x)` with the Gaussian CDF, not the tanh surrogate.
    pub fn gelu(&self) -> Self {
        self.map(|x| x * x.norm_cdf())
    }

    pub fn norm_cdf(&self) -> Self {
        self.map(|x| x.norm_cdf())
    }

    pub fn sum_all(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &x| acc + x)
    }

    pub fn mean_all(&self) -> S {
        if self.data.is_empty() {
            S::zero()
        } else {
            self.sum_all() / S::of(self.data.len() as f64)
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Reshape without moving data; element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel_of(shape) != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{} elements", self.numel()),
                format!("shape {shape:?} with {} elements", numel_of(shape)),
            ));
        }
        Ok(TensorBase {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Exact bitwise equality of shape and payload.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.f64().to_bits() == b.f64().to_bits())
    }
}
