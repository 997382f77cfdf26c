//! Scalar abstraction for the floating-point geometry.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Floating scalar used by the geometry layers: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }

    /// Reduce an angle into `[0, 2π)`.
    fn wrap_angle(theta: Self) -> Self {
        let tau = Self::TAU();
        let mut r = theta % tau;
        if r < Self::zero() {
            r = r + tau;
        }
        if r >= tau {
            r = r - tau;
        }
        r
    }

    /// Signed angular difference folded into `(-π, π]`.
    fn angle_diff(a: Self, b: Self) -> Self {
        let pi = Self::PI();
        let mut d = Self::wrap_angle(a - b);
        if d > pi {
            d = d - Self::TAU();
        }
        d
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Numerical tolerances shared by every module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Geometric identities (equivariance, flow consistency).
    pub geometric: f64,
    /// Algebraic identities (determinants, round trips on well-conditioned input).
    pub algebraic: f64,
    /// Threshold under which two convex sets count as touching.
    pub sets_too_close: f64,
}

pub const TOL: Tolerances = Tolerances {
    geometric: 1e-9,
    algebraic: 1e-12,
    sets_too_close: 1e-9,
};
