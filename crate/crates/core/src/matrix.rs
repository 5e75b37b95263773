use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type for tables and matrices. `f32` is the storage type; `f64`
/// is used where finite-difference precision matters.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Debug + Default + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major matrix of embedding vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix<T = f32> {
    rows: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> EmbeddingMatrix<T> {
    /// Wraps row-major `data`. Entries must be finite and `dim` positive.
    pub fn new(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("matrix dimension must be positive".into()));
        }
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::Data(format!(
                "{} values cannot form a {rows} x {dim} matrix",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            data: vec![T::zero(); rows * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Data("ragged rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
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

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    /// Element-wise conversion, e.g. `f32` storage to `f64` working copies.
    pub fn cast<U: Real>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            rows: self.rows,
            dim: self.dim,
            data: self
                .data
                .iter()
                .map(|v| U::from(*v).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    /// Mean squared difference against `other`, accumulated in `f64`.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        if self.rows != other.rows || self.dim != other.dim {
            return Err(Error::Data(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.rows, self.dim, other.rows, other.dim
            )));
        }
        if self.data.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.to_f64().unwrap_or(f64::NAN) - b.to_f64().unwrap_or(f64::NAN);
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

/// Squared L2 distance.
pub(crate) fn squared_l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
