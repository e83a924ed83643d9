//! One-sided (Hestenes) Jacobi SVD.
//!
//! Pairs of columns are rotated until every pair is orthogonal to within the
//! scalar's tolerance; the column norms are then the singular values. Slow
//! for large inputs but accurate, which is what the bias measurements need.

use super::solve::{columns_to_matrix, orthonormalize_columns};
use super::{dot_slices, Matrix, MatrixError, Result};
use crate::scalar::Scalar;

pub const MAX_SWEEPS: usize = 100;
pub const MAX_SVD_DIM: usize = 1024;

/// Thin decomposition `m = u · diag(s) · vᵀ` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    /// rows × k, orthonormal columns.
    pub u: Matrix<T>,
    pub singular_values: Vec<T>,
    /// cols × k, orthonormal columns.
    pub v: Matrix<T>,
    pub sweeps: usize,
}

impl<T: Scalar> Svd<T> {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        let k = self.rank();
        let mut us = self.u.clone();
        for row in us.as_mut_slice().chunks_mut(k) {
            for (v, &s) in row.iter_mut().zip(&self.singular_values) {
                *v *= s;
            }
        }
        us.matmul_t(&self.v).expect("svd factors are conformable")
    }

    /// Keeps the leading `k` triplets.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.rank() {
            return Err(MatrixError::RankOutOfRange { k, max: self.rank() });
        }
        Ok(Self {
            u: self.u.slice_cols(0..k)?,
            singular_values: self.singular_values[..k].to_vec(),
            v: self.v.slice_cols(0..k)?,
            sweeps: self.sweeps,
        })
    }
}

/// Full thin SVD with `min(rows, cols)` triplets.
pub fn thin_svd<T: Scalar>(m: &Matrix<T>) -> Result<Svd<T>> {
    let (rows, cols) = m.shape();
    if rows > MAX_SVD_DIM || cols > MAX_SVD_DIM {
        return Err(MatrixError::TooLarge {
            rows,
            cols,
            max: MAX_SVD_DIM,
        });
    }
    if rows < cols {
        let t = jacobi_tall(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
            sweeps: t.sweeps,
        });
    }
    jacobi_tall(m)
}

/// Leading `k` singular triplets; `u · diag(s) · vᵀ` is the best rank-`k`
/// Frobenius approximation of `m`.
pub fn truncated_svd<T: Scalar>(m: &Matrix<T>, k: usize) -> Result<Svd<T>> {
    let max = m.rows().min(m.cols());
    if k == 0 || k > max {
        return Err(MatrixError::RankOutOfRange { k, max });
    }
    thin_svd(m)?.truncate(k)
}

fn jacobi_tall<T: Scalar>(m: &Matrix<T>) -> Result<Svd<T>> {
    let (rows, n) = m.shape();
    let tol = T::svd_tolerance();
    let eps = T::epsilon();
    let mut w: Vec<Vec<T>> = (0..n).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            e
        })
        .collect();

    let mut sweeps = 0;
    let mut converged = n < 2;
    let mut off = T::zero();
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(MatrixError::NoConvergence {
                sweeps,
                off_diagonal: off.to_f64_lossy(),
            });
        }
        sweeps += 1;
        off = T::zero();
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot_slices(&w[p], &w[p]);
                let beta = dot_slices(&w[q], &w[q]);
                let gamma = dot_slices(&w[p], &w[q]);
                let scale = (alpha * beta).sqrt();
                if scale == T::zero() || !scale.is_normal() {
                    continue;
                }
                let rel = gamma.abs() / scale;
                off = off.max(rel);
                if rel <= eps {
                    continue;
                }
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        converged = off <= tol;
    }

    let mut sigma: Vec<(T, usize)> = w
        .iter()
        .enumerate()
        .map(|(j, col)| (dot_slices(col, col).sqrt(), j))
        .collect();
    sigma.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));

    let s_max = sigma.first().map_or(T::zero(), |s| s.0);
    let floor = s_max * eps * T::from_count(rows.max(n));
    let mut u_cols = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for &(s, j) in &sigma {
        if s > floor && s > T::zero() {
            u_cols.push(w[j].iter().map(|&x| x / s).collect());
        } else {
            // Left vector undefined; orthonormalize_columns completes it.
            u_cols.push(vec![T::zero(); rows]);
        }
        v_cols.push(v[j].clone());
        values.push(s);
    }
    let u_cols = orthonormalize_columns(u_cols, rows);
    Ok(Svd {
        u: columns_to_matrix(&u_cols, rows),
        singular_values: values,
        v: columns_to_matrix(&v_cols, n),
        sweeps,
    })
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(q);
    for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{gaussian_fill, RngSeed};

    fn orthonormality_error(m: &Matrix<f64>) -> f64 {
        let g = m.t_matmul(m).unwrap();
        g.distance(&Matrix::identity(m.cols())).unwrap()
    }

    #[test]
    fn diagonal_case() {
        let m = Matrix::<f64>::from_diag(&[3.0, 2.0, 1.0]);
        let svd = truncated_svd(&m, 2).unwrap();
        assert!((svd.singular_values[0] - 3.0).abs() < 1e-12);
        assert!((svd.singular_values[1] - 2.0).abs() < 1e-12);
        let err = m.distance(&svd.reconstruct()).unwrap();
        assert!((err - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_rank_one() {
        let u = gaussian_fill::<f64>(6, 1, 1.0, RngSeed(1)).unwrap();
        let v = gaussian_fill::<f64>(1, 4, 1.0, RngSeed(2)).unwrap();
        let m = u.matmul(&v).unwrap();
        let svd = truncated_svd(&m, 1).unwrap();
        assert!(m.distance(&svd.reconstruct()).unwrap() <= 1e-10);
        let full = thin_svd(&m).unwrap();
        assert!(orthonormality_error(&full.u) <= 1e-8);
        assert!(orthonormality_error(&full.v) <= 1e-8);
    }

    #[test]
    fn wide_and_tall_agree() {
        let m = gaussian_fill::<f64>(5, 9, 1.0, RngSeed(3)).unwrap();
        let a = thin_svd(&m).unwrap();
        let b = thin_svd(&m.transpose()).unwrap();
        for (x, y) in a.singular_values.iter().zip(&b.singular_values) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(m.distance(&a.reconstruct()).unwrap() < 1e-12);
        assert_eq!(a.u.shape(), (5, 5));
        assert_eq!(a.v.shape(), (9, 5));
    }

    #[test]
    fn rank_bounds() {
        let m = Matrix::<f64>::identity(3);
        assert!(matches!(
            truncated_svd(&m, 0),
            Err(MatrixError::RankOutOfRange { .. })
        ));
        assert!(matches!(
            truncated_svd(&m, 4),
            Err(MatrixError::RankOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_matrix_has_orthonormal_factors() {
        let svd = thin_svd(&Matrix::<f64>::zeros(4, 3)).unwrap();
        assert!(svd.singular_values.iter().all(|&s| s == 0.0));
        assert!(orthonormality_error(&svd.u) < 1e-12);
        assert!(orthonormality_error(&svd.v) < 1e-12);
    }

    #[test]
    fn single_precision() {
        let m = gaussian_fill::<f32>(6, 4, 1.0, RngSeed(4)).unwrap();
        let svd = thin_svd(&m).unwrap();
        assert!(m.distance(&svd.reconstruct()).unwrap() < 1e-4);
    }
}
