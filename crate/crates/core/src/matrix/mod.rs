//! Dense row-major matrices and the handful of kernels the simulator needs.
//!
//! Values are immutable once built: every operation returns a new matrix.

mod random;
mod solve;
mod svd;

use std::fmt;
use std::ops::{Index, Range};

use thiserror::Error;

use crate::scalar::Scalar;

pub use random::{gaussian_fill, RngSeed};
pub use solve::{orthonormal_from, solve_spd};
pub use svd::{thin_svd, truncated_svd, Svd, MAX_SVD_DIM, MAX_SWEEPS};

/// Norm floor below which a matrix is treated as zero by similarity measures.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatrixError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix data has {len} entries, expected {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("matrix dimensions must be positive, got {rows}x{cols}")]
    EmptyShape { rows: usize, cols: usize },
    #[error("matrix contains a non-finite entry")]
    NonFinite,
    #[error("{op}: degenerate input (Frobenius norm {norm:e} below {floor:e})")]
    Degenerate { op: &'static str, norm: f64, floor: f64 },
    #[error("rank {k} out of range 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
    #[error("{rows}x{cols} exceeds the supported size of {max} per side")]
    TooLarge { rows: usize, cols: usize, max: usize },
    #[error("svd did not converge after {sweeps} sweeps (off-diagonal {off_diagonal:e})")]
    NoConvergence { sweeps: usize, off_diagonal: f64 },
    #[error("matrix is not symmetric positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("standard deviation must be positive, got {0}")]
    BadStd(f64),
}

pub type Result<T> = std::result::Result<T, MatrixError>;

#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    /// Zero matrix. Panics on a zero dimension.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_diag(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(MatrixError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(MatrixError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(MatrixError::BadLength {
                    rows: rows.len(),
                    cols,
                    len: data.len() + r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    /// Unchecked constructor for kernels that already guarantee the shape.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(MatrixError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_raw(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    /// `self += c * other`, in place.
    pub(crate) fn axpy_assign(&mut self, c: T, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![T::zero(); self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Self::from_raw(self.cols, self.rows, out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(MatrixError::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (n, m) = (self.rows, other.cols);
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let out_row = &mut out[i * m..(i + 1) * m];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(Self::from_raw(n, m, out))
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(MatrixError::DimensionMismatch {
                op: "matmul_t",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (n, m) = (self.rows, other.rows);
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                out.push(dot_slices(a, other.row(j)));
            }
        }
        Ok(Self::from_raw(n, m, out))
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(MatrixError::DimensionMismatch {
                op: "t_matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (n, m) = (self.cols, other.cols);
        let mut out = vec![T::zero(); n * m];
        for k in 0..self.rows {
            let a = self.row(k);
            let b = other.row(k);
            for (i, &ai) in a.iter().enumerate() {
                if ai == T::zero() {
                    continue;
                }
                let out_row = &mut out[i * m..(i + 1) * m];
                for (o, &bj) in out_row.iter_mut().zip(b) {
                    *o += ai * bj;
                }
            }
        }
        Ok(Self::from_raw(n, m, out))
    }

    pub fn hstack(blocks: &[&Self]) -> Result<Self> {
        let first = blocks.first().ok_or(MatrixError::EmptyShape { rows: 0, cols: 0 })?;
        let rows = first.rows;
        for b in blocks {
            if b.rows != rows {
                return Err(MatrixError::DimensionMismatch {
                    op: "hstack",
                    left: first.shape(),
                    right: b.shape(),
                });
            }
        }
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for b in blocks {
                data.extend_from_slice(b.row(i));
            }
        }
        Ok(Self::from_raw(rows, cols, data))
    }

    pub fn vstack(blocks: &[&Self]) -> Result<Self> {
        let first = blocks.first().ok_or(MatrixError::EmptyShape { rows: 0, cols: 0 })?;
        let cols = first.cols;
        for b in blocks {
            if b.cols != cols {
                return Err(MatrixError::DimensionMismatch {
                    op: "vstack",
                    left: first.shape(),
                    right: b.shape(),
                });
            }
        }
        let rows: usize = blocks.iter().map(|b| b.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for b in blocks {
            data.extend_from_slice(&b.data);
        }
        Ok(Self::from_raw(rows, cols, data))
    }

    /// Embeds `self` in the top-left corner of a larger zero matrix.
    pub fn pad_zero(&self, target_rows: usize, target_cols: usize) -> Result<Self> {
        if target_rows < self.rows || target_cols < self.cols {
            return Err(MatrixError::DimensionMismatch {
                op: "pad_zero",
                left: self.shape(),
                right: (target_rows, target_cols),
            });
        }
        let mut out = Self::zeros(target_rows, target_cols);
        for i in 0..self.rows {
            out.data[i * target_cols..i * target_cols + self.cols].copy_from_slice(self.row(i));
        }
        Ok(out)
    }

    pub fn slice_rows(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.rows {
            return Err(MatrixError::DimensionMismatch {
                op: "slice_rows",
                left: self.shape(),
                right: (range.start, range.end),
            });
        }
        let data = self.data[range.start * self.cols..range.end * self.cols].to_vec();
        Ok(Self::from_raw(range.len(), self.cols, data))
    }

    pub fn slice_cols(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.cols {
            return Err(MatrixError::DimensionMismatch {
                op: "slice_cols",
                left: self.shape(),
                right: (range.start, range.end),
            });
        }
        let mut data = Vec::with_capacity(self.rows * range.len());
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[range.clone()]);
        }
        Ok(Self::from_raw(self.rows, range.len(), data))
    }

    pub fn frobenius_norm(&self) -> T {
        // Scaled accumulation keeps tiny and huge entries from under/overflowing.
        let scale = self.max_abs();
        if scale == T::zero() {
            return T::zero();
        }
        let sum: T = self.data.iter().map(|&v| (v / scale) * (v / scale)).sum();
        scale * sum.sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Inner product of the flattened matrices.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "dot")?;
        Ok(dot_slices(&self.data, &other.data))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// `‖self − other‖_F`.
    pub fn distance(&self, other: &Self) -> Result<T> {
        Ok(self.sub(other)?.frobenius_norm())
    }
}

#[inline]
pub(crate) fn dot_slices<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Cosine of the angle between two matrices viewed as flat vectors.
pub fn cosine_similarity_flat<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<T> {
    a.check_same_shape(b, "cosine_similarity_flat")?;
    let floor = T::lit(DEGENERATE_NORM);
    let na = a.frobenius_norm();
    let nb = b.frobenius_norm();
    for n in [na, nb] {
        if n < floor {
            return Err(MatrixError::Degenerate {
                op: "cosine_similarity_flat",
                norm: n.to_f64_lossy(),
                floor: DEGENERATE_NORM,
            });
        }
    }
    let c = dot_slices(&a.data, &b.data) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

impl<T: Scalar> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            write!(f, "  ")?;
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for v in row.iter().take(8) {
                write!(f, "{v:>12.5?} ")?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}
