//! Low-rank adapter pairs and the frozen base weight they modify.
//!
//! A pair holds `B` (d×r) and `A` (r×l); the weight update it represents is
//! `ΔW = B·A` with no extra scaling factor.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{gaussian_fill, Matrix, MatrixError, RngSeed};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoraError {
    #[error("rank must be at least 1")]
    ZeroRank,
    #[error("rank {rank} exceeds min(d, l) = {max} for a {d}x{l} weight")]
    RankTooLarge { rank: usize, d: usize, l: usize, max: usize },
    #[error("factor shapes B {b:?} and A {a:?} do not share an inner rank")]
    InnerMismatch { b: (usize, usize), a: (usize, usize) },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

pub type Result<T> = std::result::Result<T, LoraError>;

/// Adapter factor pair `(B, A)` with `B.cols == A.rows == rank`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair<T> {
    b: Matrix<T>,
    a: Matrix<T>,
}

impl<T: Scalar> LoraPair<T> {
    pub fn new(b: Matrix<T>, a: Matrix<T>) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(LoraError::InnerMismatch {
                b: b.shape(),
                a: a.shape(),
            });
        }
        check_rank(b.rows(), a.cols(), b.cols())?;
        Ok(Self { b, a })
    }

    #[inline]
    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    #[inline]
    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn into_parts(self) -> (Matrix<T>, Matrix<T>) {
        (self.b, self.a)
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    /// Output dimension `d`.
    #[inline]
    pub fn out_dim(&self) -> usize {
        self.b.rows()
    }

    /// Input dimension `l`.
    #[inline]
    pub fn in_dim(&self) -> usize {
        self.a.cols()
    }

    /// `ΔW = B·A`.
    pub fn effective_update(&self) -> Matrix<T> {
        self.b.matmul(&self.a).expect("pair invariants guarantee conformable factors")
    }

    /// Trainable parameters `r·(d + l)`.
    pub fn param_count(&self) -> usize {
        self.rank() * (self.out_dim() + self.in_dim())
    }
}

pub fn check_rank(d: usize, l: usize, rank: usize) -> Result<()> {
    if rank == 0 {
        return Err(LoraError::ZeroRank);
    }
    let max = d.min(l);
    if rank > max {
        return Err(LoraError::RankTooLarge { rank, d, l, max });
    }
    Ok(())
}

/// `r·(d + l)`, the parameter count of a rank-`r` adapter on a d×l weight.
pub fn param_count(d: usize, l: usize, rank: usize) -> Result<usize> {
    check_rank(d, l, rank)?;
    Ok(rank * (d + l))
}

/// Standard adapter init: `A` Gaussian, `B` zero, so the update starts at zero.
pub fn init_pair<T: Scalar>(d: usize, l: usize, rank: usize, std: f64, seed: RngSeed) -> Result<LoraPair<T>> {
    check_rank(d, l, rank)?;
    let a = gaussian_fill(rank, l, std, seed)?;
    LoraPair::new(Matrix::zeros(d, rank), a)
}

/// The pre-trained weight `W0`. Only FLoRA-style folding produces a new base.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenBase<T> {
    w0: Matrix<T>,
}

impl<T: Scalar> FrozenBase<T> {
    pub fn new(w0: Matrix<T>) -> Self {
        Self { w0 }
    }

    #[inline]
    pub fn weight(&self) -> &Matrix<T> {
        &self.w0
    }

    /// Weight actually used by the model: `W0 + B·A`.
    pub fn with_adapter(&self, pair: &LoraPair<T>) -> Result<Matrix<T>> {
        Ok(self.w0.add(&pair.effective_update())?)
    }
}

/// New base `W0 + delta`.
pub fn fold_into_base<T: Scalar>(base: &FrozenBase<T>, delta: &Matrix<T>) -> Result<FrozenBase<T>> {
    Ok(FrozenBase::new(base.w0.add(delta)?))
}

/// On-disk form of a pair, row-major factors in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub d: usize,
    pub l: usize,
    pub rank: usize,
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

impl<T: Scalar> From<&LoraPair<T>> for PairRecord {
    fn from(p: &LoraPair<T>) -> Self {
        Self {
            d: p.out_dim(),
            l: p.in_dim(),
            rank: p.rank(),
            b: p.b.as_slice().iter().map(|v| v.to_f64_lossy()).collect(),
            a: p.a.as_slice().iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }
}

impl PairRecord {
    pub fn to_pair<T: Scalar>(&self) -> Result<LoraPair<T>> {
        let conv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<_>>();
        let b = Matrix::from_vec(self.d, self.rank, conv(&self.b))?;
        let a = Matrix::from_vec(self.rank, self.l, conv(&self.a))?;
        LoraPair::new(b, a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::thin_svd;
    use proptest::prelude::*;

    #[test]
    fn init_gives_zero_update() {
        let p = init_pair::<f64>(6, 9, 3, 0.02, RngSeed(1)).unwrap();
        assert!(p.effective_update().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(p, init_pair::<f64>(6, 9, 3, 0.02, RngSeed(1)).unwrap());
    }

    #[test]
    fn init_rejects_rank_over_bound() {
        assert!(matches!(
            init_pair::<f64>(8, 8, 16, 0.02, RngSeed(1)),
            Err(LoraError::RankTooLarge { .. })
        ));
        assert!(matches!(
            init_pair::<f64>(8, 8, 2, 0.0, RngSeed(1)),
            Err(LoraError::Matrix(MatrixError::BadStd(_)))
        ));
    }

    #[test]
    fn hand_update() {
        let b = Matrix::from_rows(&[[1.0], [0.0]]).unwrap();
        let a = Matrix::from_rows(&[[2.0, 3.0]]).unwrap();
        let p = LoraPair::new(b, a).unwrap();
        assert_eq!(p.effective_update().as_slice(), &[2.0, 3.0, 0.0, 0.0]);
    }

    #[test]
    fn update_rank_is_bounded() {
        let b = gaussian_fill::<f64>(8, 2, 1.0, RngSeed(5)).unwrap();
        let a = gaussian_fill::<f64>(2, 7, 1.0, RngSeed(6)).unwrap();
        let p = LoraPair::new(b, a).unwrap();
        let s = thin_svd(&p.effective_update()).unwrap().singular_values;
        assert!(s[1] > 1e-3);
        assert!(s[2..].iter().all(|&x| x < 1e-10), "{s:?}");
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(param_count(4, 6, 2).unwrap(), 20);
        assert_eq!(param_count(768, 768, 16).unwrap(), 24576);
        assert_eq!(param_count(4, 6, 0), Err(LoraError::ZeroRank));
        let p = init_pair::<f64>(4, 6, 2, 0.02, RngSeed(0)).unwrap();
        assert_eq!(p.param_count(), 20);
    }

    #[test]
    fn mismatched_factors() {
        let b = Matrix::<f64>::zeros(4, 2);
        let a = Matrix::<f64>::zeros(3, 4);
        assert!(matches!(LoraPair::new(b, a), Err(LoraError::InnerMismatch { .. })));
    }

    #[test]
    fn folding() {
        let base = FrozenBase::new(gaussian_fill::<f64>(3, 4, 1.0, RngSeed(1)).unwrap());
        let zero = Matrix::zeros(3, 4);
        assert_eq!(fold_into_base(&base, &zero).unwrap(), base);

        let d = gaussian_fill::<f64>(3, 4, 1.0, RngSeed(2)).unwrap();
        let there = fold_into_base(&base, &d).unwrap();
        let back = fold_into_base(&there, &d.scale(-1.0)).unwrap();
        assert!(back.weight().max_abs_diff(base.weight()).unwrap() <= 1e-15 * 8.0);
        assert!(fold_into_base(&base, &Matrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn fold_matches_adapter_forward_pass() {
        // Logits W·x for a batch of inputs, computed both ways.
        let base = FrozenBase::new(gaussian_fill::<f64>(5, 7, 1.0, RngSeed(1)).unwrap());
        let p = LoraPair::new(
            gaussian_fill(5, 2, 0.3, RngSeed(2)).unwrap(),
            gaussian_fill(2, 7, 0.3, RngSeed(3)).unwrap(),
        )
        .unwrap();
        let x = gaussian_fill::<f64>(7, 11, 1.0, RngSeed(4)).unwrap();
        let folded = fold_into_base(&base, &p.effective_update()).unwrap();
        let via_fold = folded.weight().matmul(&x).unwrap();
        let via_adapter = base
            .weight()
            .matmul(&x)
            .unwrap()
            .add(&p.b().matmul(&p.a().matmul(&x).unwrap()).unwrap())
            .unwrap();
        assert!(via_fold.max_abs_diff(&via_adapter).unwrap() <= 1e-12);
    }

    #[test]
    fn record_round_trip() {
        let p = LoraPair::new(
            gaussian_fill::<f64>(4, 2, 1.0, RngSeed(2)).unwrap(),
            gaussian_fill::<f64>(2, 3, 1.0, RngSeed(3)).unwrap(),
        )
        .unwrap();
        let json = serde_json::to_string(&PairRecord::from(&p)).unwrap();
        let back: PairRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_pair::<f64>().unwrap(), p);
    }

    proptest! {
        #[test]
        fn update_norm_is_submultiplicative(seed in 0u64..500, r in 1usize..4) {
            let p = LoraPair::new(
                gaussian_fill::<f64>(6, r, 1.0, RngSeed(seed)).unwrap(),
                gaussian_fill::<f64>(r, 5, 1.0, RngSeed(seed + 1000)).unwrap(),
            ).unwrap();
            let lhs = p.effective_update().frobenius_norm();
            prop_assert!(lhs <= p.b().frobenius_norm() * p.a().frobenius_norm() * (1.0 + 1e-12));
        }
    }
}
