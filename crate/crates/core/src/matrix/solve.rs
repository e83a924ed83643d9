use super::{dot_slices, Matrix, MatrixError, Result};
use crate::scalar::Scalar;

/// Solves `a · x = b` for symmetric positive-definite `a` by Cholesky
/// factorization. `b` may have several right-hand-side columns.
pub fn solve_spd<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(MatrixError::DimensionMismatch {
            op: "solve_spd",
            left: a.shape(),
            right: b.shape(),
        });
    }
    // Lower-triangular factor, row-major.
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a.get(i, j) - dot_slices(&l[i * n..i * n + j], &l[j * n..j * n + j]);
            if i == j {
                if s.is_nan() || s <= T::zero() {
                    return Err(MatrixError::NotPositiveDefinite {
                        pivot: i,
                        value: s.to_f64_lossy(),
                    });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let m = b.cols();
    let mut x = b.clone().into_vec();
    for c in 0..m {
        // Forward: L y = b.
        for i in 0..n {
            let mut s = x[i * m + c];
            for k in 0..i {
                s -= l[i * n + k] * x[k * m + c];
            }
            x[i * m + c] = s / l[i * n + i];
        }
        // Backward: Lᵀ x = y.
        for i in (0..n).rev() {
            let mut s = x[i * m + c];
            for k in i + 1..n {
                s -= l[k * n + i] * x[k * m + c];
            }
            x[i * m + c] = s / l[i * n + i];
        }
    }
    Ok(Matrix::from_raw(n, m, x))
}

/// Orthonormalizes the columns of a square matrix (modified Gram–Schmidt,
/// applied twice). Columns that collapse are replaced by a standard basis
/// vector orthogonal to the ones kept so far.
pub fn orthonormal_from<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let cols: Vec<Vec<T>> = (0..m.cols()).map(|j| m.column(j)).collect();
    let q = orthonormalize_columns(cols, m.rows());
    columns_to_matrix(&q, m.rows())
}

pub(crate) fn orthonormalize_columns<T: Scalar>(mut cols: Vec<Vec<T>>, rows: usize) -> Vec<Vec<T>> {
    let mut basis_cursor = 0;
    for j in 0..cols.len() {
        let original = norm(&cols[j]);
        for _ in 0..2 {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let p = dot_slices(&done[i], &rest[0]);
                for (v, &q) in rest[0].iter_mut().zip(&done[i]) {
                    *v -= p * q;
                }
            }
        }
        let nrm = norm(&cols[j]);
        if original > T::zero() && nrm > original * T::lit(1e-6) {
            cols[j].iter_mut().for_each(|v| *v /= nrm);
            continue;
        }
        // Collapsed: find a basis vector with a usable orthogonal component.
        loop {
            assert!(basis_cursor < rows, "cannot complete orthonormal basis");
            let mut e = vec![T::zero(); rows];
            e[basis_cursor] = T::one();
            basis_cursor += 1;
            for _ in 0..2 {
                for q in &cols[..j] {
                    let p = dot_slices(q, &e);
                    for (v, &qv) in e.iter_mut().zip(q) {
                        *v -= p * qv;
                    }
                }
            }
            let nrm = norm(&e);
            if nrm > T::lit(1e-3) {
                e.iter_mut().for_each(|v| *v /= nrm);
                cols[j] = e;
                break;
            }
        }
    }
    cols
}

pub(crate) fn columns_to_matrix<T: Scalar>(cols: &[Vec<T>], rows: usize) -> Matrix<T> {
    let n = cols.len();
    let mut data = vec![T::zero(); rows * n];
    for (j, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            data[i * n + j] = v;
        }
    }
    Matrix::from_raw(rows, n, data)
}

fn norm<T: Scalar>(v: &[T]) -> T {
    dot_slices(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{gaussian_fill, RngSeed};

    #[test]
    fn spd_solve_recovers_rhs() {
        let g = gaussian_fill::<f64>(5, 5, 1.0, RngSeed(2)).unwrap();
        let a = g.matmul_t(&g).unwrap().add(&Matrix::identity(5)).unwrap();
        let x = gaussian_fill::<f64>(5, 3, 1.0, RngSeed(3)).unwrap();
        let b = a.matmul(&x).unwrap();
        let got = solve_spd(&a, &b).unwrap();
        assert!(got.max_abs_diff(&x).unwrap() < 1e-10);
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        assert!(matches!(
            solve_spd(&a, &b),
            Err(MatrixError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn orthonormalized_gaussian_is_orthogonal() {
        let g = gaussian_fill::<f64>(6, 6, 1.0, RngSeed(11)).unwrap();
        let q = orthonormal_from(&g);
        let qtq = q.t_matmul(&q).unwrap();
        assert!(qtq.distance(&Matrix::identity(6)).unwrap() < 1e-12);
    }

    #[test]
    fn collapsed_columns_are_completed() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let q = orthonormal_from(&m);
        let qtq = q.t_matmul(&q).unwrap();
        assert!(qtq.distance(&Matrix::identity(3)).unwrap() < 1e-12);
    }
}
