use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major fp32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel == 0 {
            return Err(Error::ShapeMismatch { left: shape, right: Vec::new() });
        }
        if numel != data.len() {
            return Err(Error::DimensionMismatch { expected: numel, found: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f32>) -> Result<Self> {
        Self::new(alloc::vec![data.len()], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape, alloc::vec![0.0; numel])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// `(rows, cols)` view used for row-contiguous grouping. Rank-1 tensors are one row.
    pub fn matrix_dims(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::UnsupportedRank(self.shape.len())),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum())
    }
}
