//! Scalar abstraction shared by every numeric module.
//!
//! Training runs in `f32`; gradient gates run the same code paths in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; used for literals and cross-precision casts.
    fn c(x: f64) -> Self;

    fn f64(self) -> f64;

    /// Numerically stable `ln(1 + e^x)`.
    fn softplus(self) -> Self {
        if self > Self::zero() {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    fn sigmoid(self) -> Self {
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::one() + e)
        }
    }
}

impl Real for f32 {
    #[inline]
    fn c(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn c(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Casts a slice between precisions.
pub fn cast_slice<A: Real, B: Real>(xs: &[A]) -> Vec<B> {
    xs.iter().map(|&x| B::c(x.f64())).collect()
}

pub fn cast_points<A: Real, B: Real>(xs: &[[A; 3]]) -> Vec<[B; 3]> {
    xs.iter()
        .map(|p| [B::c(p[0].f64()), B::c(p[1].f64()), B::c(p[2].f64())])
        .collect()
}

/// Lossless-enough conversion for printing and metrics.
pub fn to_f64_vec<T: Real>(xs: &[T]) -> Vec<f64> {
    xs.iter().map(|x| x.f64()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(1000.0f64.softplus(), 1000.0);
        assert!((-1000.0f64).softplus() >= 0.0);
        assert!(((0.0f64).softplus() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((30.0f32.softplus() - 30.0).abs() < 1e-5);
    }

    #[test]
    fn sigmoid_symmetry() {
        for &x in &[-40.0f64, -3.0, 0.0, 0.5, 17.0] {
            assert!((x.sigmoid() + (-x).sigmoid() - 1.0).abs() < 1e-15);
        }
    }
}
