//! Floating point element type shared by the linear algebra, adapter and
//! aggregation code.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Real scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and sampled noise.
    fn lit(v: f64) -> Self;

    /// Conversion of a count.
    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Relative off-diagonal tolerance for the Jacobi SVD sweeps.
    fn svd_tolerance() -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    fn svd_tolerance() -> Self {
        // 1e-10 is below f32 resolution.
        f32::EPSILON * 8.0
    }
}

impl Scalar for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    fn svd_tolerance() -> Self {
        1e-10
    }
}
