//! Row-major `f32` embedding storage and borrowed row views.

use crate::error::{Error, Result};

/// Tolerance on `|‖row‖₂ − 1|` for stored embedding rows.
pub const UNIT_NORM_TOL: f64 = 1e-4;

/// A dense `rows × dim` matrix of 32-bit floats, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("embedding dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "buffer of {} floats is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, data: Vec::new() }
    }

    pub fn from_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push_row(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn view(&self) -> MatrixView<'_> {
        MatrixView {
            dim: self.dim,
            data: &self.data,
        }
    }

    /// Borrow rows `start..start + len` without copying.
    pub fn slice(&self, start: usize, len: usize) -> Result<MatrixView<'_>> {
        let end = start
            .checked_add(len)
            .filter(|&end| end <= self.rows())
            .ok_or(Error::OutOfRange {
                index: start + len,
                len: self.rows(),
            })?;
        Ok(MatrixView {
            dim: self.dim,
            data: &self.data[start * self.dim..end * self.dim],
        })
    }

    /// Index of the first row whose L2 norm deviates from 1 by more than `tol`.
    pub fn check_unit_norm(&self, tol: f64) -> Result<()> {
        for i in 0..self.rows() {
            let norm = l2_norm(self.row(i));
            if (norm - 1.0).abs() > tol {
                return Err(Error::NotUnitNorm { row: i, norm });
            }
        }
        Ok(())
    }
}

/// Borrowed, contiguous run of rows from an [`EmbeddingMatrix`].
#[derive(Debug, Clone, Copy)]
pub struct MatrixView<'a> {
    dim: usize,
    data: &'a [f32],
}

impl<'a> MatrixView<'a> {
    pub fn new(dim: usize, data: &'a [f32]) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!(
                "cannot view {} floats as rows of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &'a [f32] {
        self.data
    }

    pub fn to_owned(&self) -> EmbeddingMatrix {
        EmbeddingMatrix {
            dim: self.dim,
            data: self.data.to_vec(),
        }
    }
}

pub(crate) fn l2_norm(row: &[f32]) -> f64 {
    row.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Dot product accumulated in `f64` over four interleaved lanes.
///
/// The lane order is fixed, so results are reproducible bit-for-bit.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += f64::from(x[0]) * f64::from(y[0]);
        acc[1] += f64::from(x[1]) * f64::from(y[1]);
        acc[2] += f64::from(x[2]) * f64::from(y[2]);
        acc[3] += f64::from(x[3]) * f64::from(y[3]);
    }
    let mut tail = 0f64;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += f64::from(*x) * f64::from(*y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
