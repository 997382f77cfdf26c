use super::{BoundaryPoint, GeometryError, Point, UnitTangent};
use crate::real::Real;
use num_complex::Complex;
use std::fmt;
use std::ops::Mul;

/// Orientation-preserving isometry `z ↦ (az + b)/(cz + d)` with `ad - bc = 1`,
/// stored in sign-canonical form (first nonzero entry positive).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moebius<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
}

impl<T: Real> Moebius<T> {
    pub fn identity() -> Self {
        Self::from_raw(T::one(), T::zero(), T::zero(), T::one())
    }

    /// Checked constructor: `det` must be 1 up to the algebraic tolerance.
    pub fn new(a: T, b: T, c: T, d: T) -> Result<Self, GeometryError> {
        let det = a * d - b * c;
        if (det - T::one()).abs() > T::lit(crate::real::TOL.algebraic) * (T::one() + a.abs() * d.abs() + b.abs() * c.abs()) {
            return Err(GeometryError::BadDeterminant(det.to_f64().unwrap_or(f64::NAN)));
        }
        Ok(Self { a, b, c, d }.canonical())
    }

    pub(crate) fn from_raw(a: T, b: T, c: T, d: T) -> Self {
        Self { a, b, c, d }
    }

    /// Rescale a positive-determinant matrix to determinant one.
    pub(crate) fn normalized(self) -> Self {
        let det = self.a * self.d - self.b * self.c;
        debug_assert!(det > T::zero());
        let k = det.sqrt().recip();
        Self { a: self.a * k, b: self.b * k, c: self.c * k, d: self.d * k }.canonical()
    }

    /// Frame `N(x) A(y) K(α)`: sends `i` to `x + iy` and rotates tangents at `i` by `-2α`.
    pub fn from_nak(x: T, y: T, alpha: T) -> Self {
        let s = y.sqrt();
        let (sin, cos) = alpha.sin_cos();
        // [[s, x/s], [0, 1/s]] · [[cos, -sin], [sin, cos]]
        let a = s * cos + x / s * sin;
        let b = -s * sin + x / s * cos;
        let c = sin / s;
        let d = cos / s;
        Self { a, b, c, d }.canonical()
    }

    /// Hyperbolic translation `z ↦ e^t z` along the imaginary axis.
    pub fn diagonal(t: T) -> Self {
        let h = (t * T::half()).exp();
        Self::from_raw(h, T::zero(), T::zero(), h.recip())
    }

    fn canonical(self) -> Self {
        let scale = self.a.abs().max(self.b.abs()).max(self.c.abs()).max(self.d.abs());
        let eps = scale * T::lit(1e-14);
        let lead = [self.a, self.b, self.c, self.d].into_iter().find(|v| v.abs() > eps).unwrap_or(T::one());
        if lead < T::zero() {
            Self { a: -self.a, b: -self.b, c: -self.c, d: -self.d }
        } else {
            self
        }
    }

    pub fn det(&self) -> T {
        self.a * self.d - self.b * self.c
    }

    pub fn inverse(&self) -> Self {
        Self::from_raw(self.d, -self.b, -self.c, self.a).canonical()
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self::from_raw(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )
        .canonical()
    }

    pub fn apply_point(&self, p: Point<T>) -> Point<T> {
        let z = p.to_complex();
        let num = z * self.a + self.b;
        let den = z * self.c + self.d;
        let den2 = den.norm_sqr();
        // Im((az+b)/(cz+d)) = y/|cz+d|² exactly when det = 1; use it to keep y > 0.
        let re = (num * den.conj()).re / den2;
        Point::from_complex(Complex::new(re, p.y / den2))
    }

    pub fn apply_boundary(&self, xi: BoundaryPoint<T>) -> BoundaryPoint<T> {
        match xi {
            BoundaryPoint::Infinity => {
                if self.c == T::zero() {
                    BoundaryPoint::Infinity
                } else {
                    BoundaryPoint::Finite(self.a / self.c)
                }
            }
            BoundaryPoint::Finite(r) => {
                let den = self.c * r + self.d;
                if den == T::zero() {
                    BoundaryPoint::Infinity
                } else {
                    BoundaryPoint::Finite((self.a * r + self.b) / den)
                }
            }
        }
    }

    /// Derivative action: the angle turns by `arg(1/(cz+d)²) = -2 arg(cz+d)`.
    pub fn apply_tangent(&self, v: UnitTangent<T>) -> UnitTangent<T> {
        let z = v.base.to_complex();
        let den = z * self.c + self.d;
        let turn = -T::two() * den.im.atan2(den.re);
        UnitTangent::new(self.apply_point(v.base), v.angle + turn)
    }

    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        let close = |u: T, v: T| (u - v).abs() <= tol * (T::one() + v.abs());
        close(self.a, other.a) && close(self.b, other.b) && close(self.c, other.c) && close(self.d, other.d)
    }
}

impl<T: Real> Mul for Moebius<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

/// Objects acted on by isometries.
pub trait Transform<T: Real>: Sized {
    fn transform(&self, g: &Moebius<T>) -> Self;
}

impl<T: Real> Transform<T> for Point<T> {
    fn transform(&self, g: &Moebius<T>) -> Self {
        g.apply_point(*self)
    }
}

impl<T: Real> Transform<T> for BoundaryPoint<T> {
    fn transform(&self, g: &Moebius<T>) -> Self {
        g.apply_boundary(*self)
    }
}

impl<T: Real> Transform<T> for UnitTangent<T> {
    fn transform(&self, g: &Moebius<T>) -> Self {
        g.apply_tangent(*self)
    }
}

/// Exact element of `PSL2(Z)`: integer entries, `ad - bc = 1`, sign-canonical.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MoebiusInt {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub d: i64,
}

/// Entries are kept below this bound so that every product in a composition
/// fits comfortably in `i64`.
pub const MOEBIUS_INT_ENTRY_BOUND: i64 = 1 << 31;

impl fmt::Debug for MoebiusInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} {}; {} {}]", self.a, self.b, self.c, self.d)
    }
}

impl MoebiusInt {
    pub const IDENTITY: MoebiusInt = MoebiusInt { a: 1, b: 0, c: 0, d: 1 };
    /// `z ↦ -1/z`, canonical form `[0 1; -1 0]`.
    pub const S: MoebiusInt = MoebiusInt { a: 0, b: 1, c: -1, d: 0 };
    /// `z ↦ z + 1`.
    pub const T: MoebiusInt = MoebiusInt { a: 1, b: 1, c: 0, d: 1 };

    pub fn new(a: i64, b: i64, c: i64, d: i64) -> Result<Self, GeometryError> {
        let det = a as i128 * d as i128 - b as i128 * c as i128;
        if det != 1 {
            return Err(GeometryError::BadDeterminant(det as f64));
        }
        if [a, b, c, d].iter().any(|v| v.unsigned_abs() > MOEBIUS_INT_ENTRY_BOUND as u64) {
            return Err(GeometryError::Overflow);
        }
        Ok(Self { a, b, c, d }.canonical())
    }

    /// Build from a matrix already known to have determinant one.
    pub(crate) fn from_unchecked(a: i64, b: i64, c: i64, d: i64) -> Self {
        debug_assert_eq!(a as i128 * d as i128 - b as i128 * c as i128, 1);
        Self { a, b, c, d }.canonical()
    }

    fn canonical(self) -> Self {
        let lead = [self.a, self.b, self.c, self.d].into_iter().find(|&v| v != 0).unwrap_or(1);
        if lead < 0 {
            Self { a: -self.a, b: -self.b, c: -self.c, d: -self.d }
        } else {
            self
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.canonical() == *self
    }

    pub fn t_power(n: i64) -> Self {
        Self { a: 1, b: n, c: 0, d: 1 }
    }

    pub fn inverse(&self) -> Self {
        Self { a: self.d, b: -self.b, c: -self.c, d: self.a }.canonical()
    }

    pub fn compose(&self, other: &Self) -> Result<Self, GeometryError> {
        let m = |x: i64, y: i64, z: i64, w: i64| -> Result<i64, GeometryError> {
            let v = x as i128 * y as i128 + z as i128 * w as i128;
            if v.unsigned_abs() > MOEBIUS_INT_ENTRY_BOUND as u128 {
                Err(GeometryError::Overflow)
            } else {
                Ok(v as i64)
            }
        };
        Ok(Self {
            a: m(self.a, other.a, self.b, other.c)?,
            b: m(self.a, other.b, self.b, other.d)?,
            c: m(self.c, other.a, self.d, other.c)?,
            d: m(self.c, other.b, self.d, other.d)?,
        }
        .canonical())
    }

    pub fn to_real<T: Real>(&self) -> Moebius<T> {
        Moebius::from_raw(T::lit(self.a as f64), T::lit(self.b as f64), T::lit(self.c as f64), T::lit(self.d as f64))
    }

    /// Squared Frobenius norm `a² + b² + c² + d²` (equals `2 cosh d(i, γi)`).
    pub fn frobenius_sq(&self) -> i128 {
        [self.a, self.b, self.c, self.d].iter().map(|&v| v as i128 * v as i128).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn translation_and_inversion() {
        let i = Point::<f64>::i();
        let t = MoebiusInt::T.to_real::<f64>();
        assert!(t.apply_point(i).approx_eq(&Point::new(1.0, 1.0).unwrap(), 1e-15));
        let s = MoebiusInt::S.to_real::<f64>();
        let img = s.apply_point(Point::on_axis(2.0));
        assert!(img.approx_eq(&Point::on_axis(0.5), 1e-15));
    }

    #[test]
    fn inversion_flips_vertical_vector_at_i() {
        let s = MoebiusInt::S.to_real::<f64>();
        let up = UnitTangent::new(Point::i(), std::f64::consts::FRAC_PI_2);
        let img = s.apply_tangent(up);
        assert!(img.approx_eq(&UnitTangent::new(Point::i(), 1.5 * std::f64::consts::PI), 1e-12));
        // finite-difference oracle: image of a short vertical curve through i
        let h = 1e-6;
        let a = s.apply_point(Point::on_axis(1.0 - h));
        let b = s.apply_point(Point::on_axis(1.0 + h));
        let ang = (b.y - a.y).atan2(b.x - a.x);
        assert!(f64::angle_diff(ang, img.angle).abs() < 1e-8);
    }

    #[test]
    fn boundary_poles_use_the_tag() {
        let s = MoebiusInt::S.to_real::<f64>();
        assert_eq!(s.apply_boundary(BoundaryPoint::Finite(0.0)), BoundaryPoint::Infinity);
        assert_eq!(s.apply_boundary(BoundaryPoint::Infinity), BoundaryPoint::Finite(0.0));
    }

    #[test]
    fn integer_canonical_form() {
        let m = MoebiusInt::new(0, -1, 1, 0).unwrap();
        assert_eq!(m, MoebiusInt::S);
        assert!(MoebiusInt::new(1, 2, 3, 4).is_err());
        let id = MoebiusInt::S.compose(&MoebiusInt::S).unwrap();
        assert_eq!(id, MoebiusInt::IDENTITY);
    }

    #[test]
    fn overflow_is_rejected() {
        let big = MoebiusInt::t_power(MOEBIUS_INT_ENTRY_BOUND - 1);
        assert_eq!(big.compose(&MoebiusInt::t_power(10)), Err(GeometryError::Overflow));
    }

    fn arb_int() -> impl Strategy<Value = MoebiusInt> {
        proptest::collection::vec(prop_oneof![Just(0u8), Just(1u8), Just(2u8)], 0..12).prop_map(|word| {
            word.into_iter().fold(MoebiusInt::IDENTITY, |acc, w| {
                let g = match w {
                    0 => MoebiusInt::S,
                    1 => MoebiusInt::T,
                    _ => MoebiusInt::T.inverse(),
                };
                acc.compose(&g).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn integer_composition_is_associative(a in arb_int(), b in arb_int(), c in arb_int()) {
            let l = a.compose(&b).unwrap().compose(&c).unwrap();
            let r = a.compose(&b.compose(&c).unwrap()).unwrap();
            prop_assert_eq!(l, r);
            prop_assert!(l.is_canonical());
            prop_assert_eq!(a.compose(&a.inverse()).unwrap(), MoebiusInt::IDENTITY);
        }

        #[test]
        fn real_composition_matches_action(a in arb_int(), b in arb_int(), x in -2.0..2.0f64, y in 0.2..3.0f64) {
            let p = Point::new(x, y).unwrap();
            let (ga, gb) = (a.to_real::<f64>(), b.to_real::<f64>());
            let lhs = (ga * gb).apply_point(p);
            let rhs = ga.apply_point(gb.apply_point(p));
            prop_assert!(lhs.approx_eq(&rhs, 1e-9));
            prop_assert!(((ga * gb).det() - 1.0).abs() < 1e-9);
            let comp = a.compose(&b).unwrap().to_real::<f64>();
            prop_assert!(comp.approx_eq(&(ga * gb), 1e-12));
        }
    }
}
