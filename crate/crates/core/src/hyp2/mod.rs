//! Upper half-plane model of the hyperbolic plane.
//!
//! Points, the circle at infinity, unit tangent vectors, isometries, the
//! Busemann cocycle, visual distances and Hopf coordinates. Every formula that
//! involves a point at infinity has an explicit branch for
//! [`BoundaryPoint::Infinity`]; no float infinities are ever produced.

mod moebius;
mod tangent;

pub use moebius::{Moebius, MoebiusInt, Transform};
pub use tangent::{
    flip, flow, hopf_coords, tangent_towards, tangent_towards_boundary, vector_from_hopf, HopfCoords, UnitTangent,
};

use crate::real::Real;
use num_complex::Complex;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point must lie in the upper half-plane (y = {0})")]
    NotInUpperHalfPlane(f64),
    #[error("geodesic endpoints coincide")]
    EqualEndpoints,
    #[error("matrix is not in SL2 (det = {0})")]
    BadDeterminant(f64),
    #[error("integer matrix composition overflows")]
    Overflow,
}

/// A point `x + iy` of the upper half-plane, `y > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Point<T> {
    pub fn new(x: T, y: T) -> Result<Self, GeometryError> {
        if y > T::zero() && x.is_finite() && y.is_finite() {
            Ok(Self { x, y })
        } else {
            Err(GeometryError::NotInUpperHalfPlane(y.to_f64().unwrap_or(f64::NAN)))
        }
    }

    /// `i·y`.
    pub fn on_axis(y: T) -> Self {
        Self::new(T::zero(), y).expect("positive height")
    }

    pub fn i() -> Self {
        Self::on_axis(T::one())
    }

    pub fn to_complex(self) -> Complex<T> {
        Complex::new(self.x, self.y)
    }

    pub(crate) fn from_complex(z: Complex<T>) -> Self {
        debug_assert!(z.im > T::zero(), "image left the upper half-plane: {z:?}");
        Self { x: z.re, y: z.im }
    }

    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        (self.x - other.x).abs() <= tol * (T::one() + other.x.abs())
            && (self.y - other.y).abs() <= tol * (T::one() + other.y.abs())
    }
}

/// A point of `R ∪ {∞}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryPoint<T> {
    Finite(T),
    Infinity,
}

impl<T: Real> BoundaryPoint<T> {
    pub fn is_infinite(&self) -> bool {
        matches!(self, BoundaryPoint::Infinity)
    }

    pub fn finite(&self) -> Option<T> {
        match *self {
            BoundaryPoint::Finite(r) => Some(r),
            BoundaryPoint::Infinity => None,
        }
    }

    /// Equality within `tol`, comparing in the `-1/ξ` chart when both are large.
    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        match (*self, *other) {
            (BoundaryPoint::Infinity, BoundaryPoint::Infinity) => true,
            (BoundaryPoint::Finite(a), BoundaryPoint::Finite(b)) => {
                if a.abs() > T::one() && b.abs() > T::one() {
                    (T::one() / a - T::one() / b).abs() <= tol
                } else {
                    (a - b).abs() <= tol
                }
            }
            (BoundaryPoint::Finite(a), BoundaryPoint::Infinity)
            | (BoundaryPoint::Infinity, BoundaryPoint::Finite(a)) => {
                a.abs() > T::one() && (T::one() / a).abs() <= tol
            }
        }
    }
}

/// Hyperbolic distance, `arcosh(1 + |p-q|²/(2 p.y q.y))` written as
/// `2 arsinh(|p-q| / (2 sqrt(p.y q.y)))` so it stays accurate for nearby points.
pub fn dist<T: Real>(p: Point<T>, q: Point<T>) -> T {
    let dx = p.x - q.x;
    let dy = p.y - q.y;
    let chord = dx.hypot(dy);
    T::two() * (chord / (T::two() * (p.y * q.y).sqrt())).asinh()
}

/// `cosh` of the hyperbolic distance.
pub fn cosh_dist<T: Real>(p: Point<T>, q: Point<T>) -> T {
    let dx = p.x - q.x;
    let dy = p.y - q.y;
    T::one() + (dx * dx + dy * dy) / (T::two() * p.y * q.y)
}

/// Poisson kernel `P(z, ξ) = y/|z-ξ|²`, with `P(z, ∞) = y`.
pub fn poisson<T: Real>(z: Point<T>, xi: BoundaryPoint<T>) -> T {
    match xi {
        BoundaryPoint::Infinity => z.y,
        BoundaryPoint::Finite(r) => {
            let dx = z.x - r;
            z.y / (dx * dx + z.y * z.y)
        }
    }
}

/// Busemann cocycle `β_ξ(p, q) = ln(P(q, ξ)/P(p, ξ))`.
pub fn busemann<T: Real>(xi: BoundaryPoint<T>, p: Point<T>, q: Point<T>) -> T {
    match xi {
        BoundaryPoint::Infinity => (q.y / p.y).ln(),
        BoundaryPoint::Finite(r) => {
            let dp = (p.x - r).hypot(p.y);
            let dq = (q.x - r).hypot(q.y);
            (q.y / p.y).ln() + T::two() * (dp / dq).ln()
        }
    }
}

/// An orientation-preserving isometry sending `0 ↦ from` and `∞ ↦ to`.
pub(crate) fn frame_for<T: Real>(
    from: BoundaryPoint<T>,
    to: BoundaryPoint<T>,
) -> Result<Moebius<T>, GeometryError> {
    use BoundaryPoint::*;
    let g = match (from, to) {
        (Infinity, Infinity) => return Err(GeometryError::EqualEndpoints),
        (Finite(m), Infinity) => Moebius::from_raw(T::one(), m, T::zero(), T::one()),
        (Infinity, Finite(p)) => Moebius::from_raw(p, -T::one(), T::one(), T::zero()),
        (Finite(m), Finite(p)) => {
            if m == p {
                return Err(GeometryError::EqualEndpoints);
            }
            if p > m {
                Moebius::from_raw(p, m, T::one(), T::one())
            } else {
                Moebius::from_raw(-p, m, -T::one(), T::one())
            }
        }
    };
    Ok(g.normalized())
}

/// Closest point to `p` on the geodesic line with endpoints `xi`, `eta`.
pub fn closest_point_on_geodesic<T: Real>(
    xi: BoundaryPoint<T>,
    eta: BoundaryPoint<T>,
    p: Point<T>,
) -> Result<Point<T>, GeometryError> {
    let g = frame_for(xi, eta)?;
    let w = g.inverse().apply_point(p);
    let r = w.x.hypot(w.y);
    Ok(g.apply_point(Point::on_axis(r)))
}

/// Distance from `p` to the geodesic line `]xi, eta[`.
pub fn dist_to_geodesic<T: Real>(
    xi: BoundaryPoint<T>,
    eta: BoundaryPoint<T>,
    p: Point<T>,
) -> Result<T, GeometryError> {
    let g = frame_for(xi, eta)?;
    let w = g.inverse().apply_point(p);
    Ok((w.x.abs() / w.y).asinh())
}

/// Visual distance on the boundary seen from `base`:
/// `exp(-(β_ξ(base, y) + β_η(base, y))/2)` with `y` the closest point to `base` on `]ξ, η[`.
pub fn visual_dist<T: Real>(
    base: Point<T>,
    xi: BoundaryPoint<T>,
    eta: BoundaryPoint<T>,
) -> Result<T, GeometryError> {
    if xi.approx_eq(&eta, T::zero()) {
        return Err(GeometryError::EqualEndpoints);
    }
    let y = closest_point_on_geodesic(xi, eta, base)?;
    Ok((-(busemann(xi, base, y) + busemann(eta, base, y)) * T::half()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point<f64> {
        Point::new(x, y).unwrap()
    }
    const INF: BoundaryPoint<f64> = BoundaryPoint::Infinity;
    fn fin(r: f64) -> BoundaryPoint<f64> {
        BoundaryPoint::Finite(r)
    }

    #[test]
    fn vertical_distance_is_log_ratio() {
        assert!((dist(p(0.0, 1.0), p(0.0, 4.0)) - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn distance_i_to_one_plus_i() {
        // independent route: the closed form arcosh(1 + 1/2)
        let expect = (1.5f64).acosh();
        assert!((dist(p(0.0, 1.0), p(1.0, 1.0)) - expect).abs() < 1e-14);
        assert!((expect - 0.962424).abs() < 1e-6);
    }

    #[test]
    fn distance_matches_path_length_oracle() {
        // polyline length along the circle |z - 1/2| = sqrt(5)/2 through i and 1 + i
        let c = 0.5;
        let r = (1.25f64).sqrt();
        let t0 = (1.0f64).atan2(-0.5);
        let t1 = (1.0f64).atan2(0.5);
        let n = 200_000;
        let mut len = 0.0;
        for k in 0..n {
            let s0 = t0 + (t1 - t0) * k as f64 / n as f64;
            let s1 = t0 + (t1 - t0) * (k + 1) as f64 / n as f64;
            let a = p(c + r * s0.cos(), r * s0.sin());
            let b = p(c + r * s1.cos(), r * s1.sin());
            let mid_y = 0.5 * (a.y + b.y);
            len += (a.x - b.x).hypot(a.y - b.y) / mid_y;
        }
        assert!((len - dist(p(0.0, 1.0), p(1.0, 1.0))).abs() < 1e-9, "{len}");
    }

    #[test]
    fn nearby_points_stay_accurate() {
        let a = p(0.3, 2.0);
        let b = p(0.3 + 1e-9, 2.0);
        let d = dist(a, b);
        let expect = (b.x - a.x) / 2.0;
        assert!((d - expect).abs() < 1e-6 * expect, "{d}");
        assert_eq!(dist(a, a), 0.0);
    }

    #[test]
    fn busemann_examples() {
        assert!((busemann(INF, p(0.0, 1.0), p(0.0, 2.0)) - 2f64.ln()).abs() < 1e-14);
        assert!((busemann(fin(0.0), p(0.0, 1.0), p(0.0, 0.5)) - 2f64.ln()).abs() < 1e-14);
        assert_eq!(busemann(fin(0.7), p(0.1, 0.3), p(0.1, 0.3)), 0.0);
    }

    #[test]
    fn busemann_matches_distance_limit() {
        // oracle: d(ρ(T), p) - d(ρ(T), q) along the ray toward ξ.
        let tt = 1e6;
        let far = p(0.0, tt);
        let lim = dist(far, p(0.0, 1.0)) - dist(far, p(0.0, 2.0));
        assert!((lim - busemann(INF, p(0.0, 1.0), p(0.0, 2.0))).abs() < 1e-6);
        let near0 = p(0.0, 1.0 / tt);
        let lim0 = dist(near0, p(0.0, 1.0)) - dist(near0, p(0.0, 0.5));
        assert!((lim0 - busemann(fin(0.0), p(0.0, 1.0), p(0.0, 0.5))).abs() < 1e-6);
        // a generic finite point, approached along a vertical ray
        let xi = 0.37;
        let (a, b) = (p(-0.2, 0.8), p(1.1, 2.5));
        let near = p(xi, 1e-7);
        let lim = dist(near, a) - dist(near, b);
        assert!((lim - busemann(fin(xi), a, b)).abs() < 1e-6);
    }

    #[test]
    fn visual_distance_examples() {
        let i = p(0.0, 1.0);
        assert!((visual_dist(i, fin(0.0), INF).unwrap() - 1.0).abs() < 1e-12);
        assert!((visual_dist(i, fin(-1.0), fin(1.0)).unwrap() - 1.0).abs() < 1e-12);
        let v = visual_dist(i, fin(1.0), INF).unwrap();
        // oracle: closest point on Re = 1 to i, located by golden-section search
        let f = |y: f64| dist(i, p(1.0, y));
        let (mut lo, mut hi) = (0.1f64, 10.0f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let m1 = hi - g * (hi - lo);
            let m2 = lo + g * (hi - lo);
            if f(m1) < f(m2) {
                hi = m2
            } else {
                lo = m1
            }
        }
        let y = p(1.0, 0.5 * (lo + hi));
        assert!((y.y - 2f64.sqrt()).abs() < 1e-7);
        let oracle = (-(busemann(fin(1.0), i, y) + busemann(INF, i, y)) / 2.0).exp();
        assert!((v - oracle).abs() < 1e-9);
        assert!((v - 0.5f64.sqrt()).abs() < 1e-9);
        assert_eq!(visual_dist(i, fin(2.0), fin(2.0)), Err(GeometryError::EqualEndpoints));
    }

    #[test]
    fn visual_distance_closed_form_at_i() {
        // |ξ-η| / sqrt((1+ξ²)(1+η²)) is the chordal form seen from i
        for &(a, b) in &[(0.3, -2.0), (5.0, 7.0), (-0.1, 0.1)] {
            let v = visual_dist(p(0.0, 1.0), fin(a), fin(b)).unwrap();
            let c = (a - b).abs() / ((1.0 + a * a) * (1.0 + b * b)).sqrt();
            assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn bourdon_sandwich_with_ln2() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut worst_upper = f64::NEG_INFINITY;
        for _ in 0..20_000 {
            let base = p(rng.gen_range(-3.0..3.0), rng.gen_range(0.05..5.0));
            let a: f64 = rng.gen_range(-10.0..10.0);
            let b: f64 = rng.gen_range(-10.0..10.0);
            if (a - b).abs() < 1e-6 {
                continue;
            }
            let (xi, eta) = if rng.gen_bool(0.1) { (fin(a), INF) } else { (fin(a), fin(b)) };
            let v = visual_dist(base, xi, eta).unwrap();
            let d = dist_to_geodesic(xi, eta, base).unwrap();
            assert!(v >= (-d).exp() * (1.0 - 1e-12), "lower bound {v} {d}");
            assert!(v <= (-d + 2f64.ln()).exp() * (1.0 + 1e-12), "upper bound {v} {d}");
            worst_upper = worst_upper.max(v.ln() + d);
        }
        // the constant is sharp up to sampling: visual distance equals 1/cosh(d)
        assert!(worst_upper < 2f64.ln() && worst_upper > 0.5);
    }

    fn arb_point() -> impl Strategy<Value = Point<f64>> {
        (-5.0..5.0f64, 0.05..5.0f64).prop_map(|(x, y)| p(x, y))
    }

    fn arb_boundary() -> impl Strategy<Value = BoundaryPoint<f64>> {
        prop_oneof![9 => (-8.0..8.0f64).prop_map(fin), 1 => Just(INF)]
    }

    fn arb_moebius() -> impl Strategy<Value = Moebius<f64>> {
        (-2.0..2.0f64, 0.3..3.0f64, 0.0..std::f64::consts::TAU)
            .prop_map(|(x, y, alpha)| Moebius::from_nak(x, y, alpha))
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in arb_point(), b in arb_point(), c in arb_point()) {
            prop_assert!(dist(a, c) <= dist(a, b) + dist(b, c) + 1e-12);
            prop_assert_eq!(dist(a, b), dist(b, a));
        }

        #[test]
        fn busemann_cocycle(xi in arb_boundary(), x in arb_point(), y in arb_point(), z in arb_point()) {
            let lhs = busemann(xi, x, z);
            let rhs = busemann(xi, x, y) + busemann(xi, y, z);
            prop_assert!((lhs - rhs).abs() < 1e-10);
            prop_assert!(busemann(xi, x, y).abs() <= dist(x, y) + 1e-10);
        }

        #[test]
        fn busemann_and_visual_equivariance(g in arb_moebius(), xi in arb_boundary(), eta in arb_boundary(),
                                            x in arb_point(), y in arb_point()) {
            prop_assume!(!xi.approx_eq(&eta, 1e-3));
            let gxi = g.apply_boundary(xi);
            let lhs = busemann(gxi, g.apply_point(x), g.apply_point(y));
            prop_assert!((lhs - busemann(xi, x, y)).abs() < 1e-8 * (1.0 + lhs.abs()));
            let v0 = visual_dist(x, xi, eta).unwrap();
            let v1 = visual_dist(g.apply_point(x), gxi, g.apply_boundary(eta)).unwrap();
            prop_assert!((v0 - v1).abs() < 1e-9 * (1.0 + v0));
        }

        #[test]
        fn conformal_change_of_basepoint(xi in arb_boundary(), eta in arb_boundary(), x in arb_point(), y in arb_point()) {
            prop_assume!(!xi.approx_eq(&eta, 1e-3));
            let ratio = visual_dist(x, xi, eta).unwrap() / visual_dist(y, xi, eta).unwrap();
            let expect = (-(busemann(xi, x, y) + busemann(eta, x, y)) / 2.0).exp();
            prop_assert!((ratio - expect).abs() < 1e-9 * expect.max(1.0));
        }
    }
}
