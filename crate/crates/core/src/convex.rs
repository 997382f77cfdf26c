//! Convex subsets of the hyperbolic plane and their common perpendiculars.
//!
//! Four kinds are supported, each with closed-form distance, projection and
//! perpendicular formulas. Most pairs are handled by moving one set to a
//! standard position (a horoball to `{y ≥ h}`, a geodesic to the imaginary
//! axis), solving there and mapping back.

use crate::hyp2::{
    closest_point_on_geodesic, dist, dist_to_geodesic, flip, flow, frame_for, tangent_towards,
    tangent_towards_boundary, BoundaryPoint, GeometryError, Moebius, Point, Transform, UnitTangent,
};
use crate::real::{Real, TOL};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvexError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("sets are closer than {0}; no common perpendicular")]
    SetsTooClose(f64),
    #[error("boundary point lies in the boundary at infinity of the set")]
    EndpointInSet,
    #[error("invalid set: {0}")]
    Invalid(&'static str),
}

/// A nonempty closed convex subset of the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvexSet<T> {
    PointSet(Point<T>),
    GeodesicLine(BoundaryPoint<T>, BoundaryPoint<T>),
    /// Center at infinity: `size` is the height `h` of `{y ≥ h}`.
    /// Finite center: `size` is the Euclidean diameter of the tangent disk.
    Horoball { center: BoundaryPoint<T>, size: T },
    Disk { center: Point<T>, radius: T },
}

impl<T: Real> ConvexSet<T> {
    pub fn geodesic(xi: BoundaryPoint<T>, eta: BoundaryPoint<T>) -> Result<Self, ConvexError> {
        if xi.approx_eq(&eta, T::zero()) {
            return Err(GeometryError::EqualEndpoints.into());
        }
        Ok(ConvexSet::GeodesicLine(xi, eta))
    }

    pub fn horoball(center: BoundaryPoint<T>, size: T) -> Result<Self, ConvexError> {
        if !(size > T::zero()) || !size.is_finite() {
            return Err(ConvexError::Invalid("horoball size must be positive"));
        }
        Ok(ConvexSet::Horoball { center, size })
    }

    pub fn disk(center: Point<T>, radius: T) -> Result<Self, ConvexError> {
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(ConvexError::Invalid("disk radius must be positive"));
        }
        Ok(ConvexSet::Disk { center, radius })
    }

    pub fn contains(&self, p: Point<T>) -> bool {
        let tol = T::lit(TOL.algebraic);
        match *self {
            ConvexSet::PointSet(q) => dist(p, q) <= tol,
            ConvexSet::GeodesicLine(xi, eta) => dist_to_geodesic(xi, eta, p).map(|d| d <= tol).unwrap_or(false),
            ConvexSet::Horoball { .. } => horoball_frame(self).1.apply_point(p).y >= horoball_frame(self).2 * (T::one() - tol),
            ConvexSet::Disk { center, radius } => dist(p, center) <= radius + tol,
        }
    }

    /// Points of the circle at infinity lying in the closure of the set.
    pub fn boundary_contains(&self, eta: BoundaryPoint<T>) -> bool {
        let tol = T::lit(TOL.algebraic);
        match *self {
            ConvexSet::PointSet(_) | ConvexSet::Disk { .. } => false,
            ConvexSet::GeodesicLine(xi, zeta) => eta.approx_eq(&xi, tol) || eta.approx_eq(&zeta, tol),
            ConvexSet::Horoball { center, .. } => eta.approx_eq(&center, tol),
        }
    }

    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        match (*self, *other) {
            (ConvexSet::PointSet(p), ConvexSet::PointSet(q)) => p.approx_eq(&q, tol),
            (ConvexSet::GeodesicLine(a, b), ConvexSet::GeodesicLine(c, d)) => {
                (a.approx_eq(&c, tol) && b.approx_eq(&d, tol)) || (a.approx_eq(&d, tol) && b.approx_eq(&c, tol))
            }
            (ConvexSet::Horoball { center: c1, size: s1 }, ConvexSet::Horoball { center: c2, size: s2 }) => {
                c1.approx_eq(&c2, tol) && (s1 - s2).abs() <= tol * (T::one() + s2.abs())
            }
            (ConvexSet::Disk { center: c1, radius: r1 }, ConvexSet::Disk { center: c2, radius: r2 }) => {
                c1.approx_eq(&c2, tol) && (r1 - r2).abs() <= tol * (T::one() + r2)
            }
            _ => false,
        }
    }
}

impl<T: Real> Transform<T> for ConvexSet<T> {
    fn transform(&self, g: &Moebius<T>) -> Self {
        match *self {
            ConvexSet::PointSet(p) => ConvexSet::PointSet(g.apply_point(p)),
            ConvexSet::GeodesicLine(a, b) => ConvexSet::GeodesicLine(g.apply_boundary(a), g.apply_boundary(b)),
            ConvexSet::Disk { center, radius } => ConvexSet::Disk { center: g.apply_point(center), radius },
            ConvexSet::Horoball { center, size } => {
                let top = match center {
                    BoundaryPoint::Infinity => Point { x: T::zero(), y: size },
                    BoundaryPoint::Finite(r) => Point { x: r, y: size },
                };
                horoball_through(g.apply_boundary(center), g.apply_point(top))
            }
        }
    }
}

/// The horoball centered at `center` whose horosphere passes through `w`.
pub fn horoball_through<T: Real>(center: BoundaryPoint<T>, w: Point<T>) -> ConvexSet<T> {
    match center {
        BoundaryPoint::Infinity => ConvexSet::Horoball { center, size: w.y },
        BoundaryPoint::Finite(r) => {
            let dx = w.x - r;
            ConvexSet::Horoball { center, size: (dx * dx + w.y * w.y) / w.y }
        }
    }
}

/// `(g, g⁻¹, h)` with `g⁻¹ H = {y ≥ h}`.
fn horoball_frame<T: Real>(set: &ConvexSet<T>) -> (Moebius<T>, Moebius<T>, T) {
    match *set {
        ConvexSet::Horoball { center: BoundaryPoint::Infinity, size } => (Moebius::identity(), Moebius::identity(), size),
        ConvexSet::Horoball { center: BoundaryPoint::Finite(r), size } => {
            // z ↦ -1/(z - r) carries the tangent disk of diameter D to {y ≥ 1/D}
            let inv = Moebius::new(T::zero(), -T::one(), T::one(), -r).expect("det 1");
            (inv.inverse(), inv, size.recip())
        }
        _ => unreachable!("not a horoball"),
    }
}

/// `(g, g⁻¹)` with `g⁻¹` carrying the geodesic onto the imaginary axis.
fn geodesic_frame<T: Real>(xi: BoundaryPoint<T>, eta: BoundaryPoint<T>) -> Result<(Moebius<T>, Moebius<T>), GeometryError> {
    let g = frame_for(xi, eta)?;
    let inv = g.inverse();
    Ok((g, inv))
}

fn point_to_horoball<T: Real>(h: &ConvexSet<T>, p: Point<T>) -> T {
    let (_, inv, height) = horoball_frame(h);
    (height / inv.apply_point(p).y).ln().max(T::zero())
}

/// Distance between two closed convex sets.
pub fn set_dist<T: Real>(a: &ConvexSet<T>, b: &ConvexSet<T>) -> T {
    use ConvexSet::*;
    let zero = T::zero();
    match (*a, *b) {
        (PointSet(p), PointSet(q)) => dist(p, q),
        (PointSet(p), GeodesicLine(x, y)) | (GeodesicLine(x, y), PointSet(p)) => dist_to_geodesic(x, y, p).unwrap_or(zero),
        (PointSet(p), Horoball { .. }) => point_to_horoball(b, p),
        (Horoball { .. }, PointSet(p)) => point_to_horoball(a, p),
        (PointSet(p), Disk { center, radius }) | (Disk { center, radius }, PointSet(p)) => (dist(p, center) - radius).max(zero),
        (Disk { center, radius }, other) | (other, Disk { center, radius }) => {
            if let Disk { center: c2, radius: r2 } = other {
                (dist(center, c2) - radius - r2).max(zero)
            } else {
                (set_dist(&PointSet(center), &other) - radius).max(zero)
            }
        }
        (GeodesicLine(x1, y1), GeodesicLine(x2, y2)) => match geodesic_pair_frame(x1, y1, x2, y2) {
            Some((_, lo, hi)) => T::two() * (lo / hi).sqrt().atanh(),
            None => zero,
        },
        (GeodesicLine(x, y), Horoball { .. }) | (Horoball { .. }, GeodesicLine(x, y)) => {
            let h = if matches!(a, Horoball { .. }) { a } else { b };
            match geodesic_over_horoball(h, x, y) {
                Some((_, _, radius, height)) => (height / radius).ln().max(zero),
                None => zero,
            }
        }
        (Horoball { .. }, Horoball { .. }) => match horoball_pair(a, b) {
            Some((_, _, height, diameter)) => (height / diameter).ln().max(zero),
            None => zero,
        },
    }
}

/// In the frame of the first geodesic (the imaginary axis), the second one has
/// endpoints `±lo, ±hi` on the same side, `0 < lo < hi`. `None` if they meet
/// or share an endpoint.
fn geodesic_pair_frame<T: Real>(
    x1: BoundaryPoint<T>,
    y1: BoundaryPoint<T>,
    x2: BoundaryPoint<T>,
    y2: BoundaryPoint<T>,
) -> Option<(Moebius<T>, T, T)> {
    let (g, inv) = geodesic_frame(x1, y1).ok()?;
    let (p, q) = (inv.apply_boundary(x2).finite()?, inv.apply_boundary(y2).finite()?);
    if p == T::zero() || q == T::zero() || (p > T::zero()) != (q > T::zero()) {
        return None;
    }
    let (lo, hi) = if p.abs() < q.abs() { (p.abs(), q.abs()) } else { (q.abs(), p.abs()) };
    if lo == hi {
        return None;
    }
    // mirror the configuration to the positive side if needed
    let g = if p < T::zero() { g.compose(&Moebius::from_raw(-T::one(), T::zero(), T::zero(), T::one())) } else { g };
    Some((g, lo, hi))
}

/// Horoball frame with the geodesic as a semicircle: `(g, center m, radius R, height h)`.
fn geodesic_over_horoball<T: Real>(
    h: &ConvexSet<T>,
    x: BoundaryPoint<T>,
    y: BoundaryPoint<T>,
) -> Option<(Moebius<T>, T, T, T)> {
    let (g, inv, height) = horoball_frame(h);
    let (p, q) = (inv.apply_boundary(x).finite()?, inv.apply_boundary(y).finite()?);
    Some((g, (p + q) * T::half(), (p - q).abs() * T::half(), height))
}

/// First horoball at `{y ≥ h}`, second at finite `ξ` with diameter `D`: `(g, ξ, h, D)`.
fn horoball_pair<T: Real>(a: &ConvexSet<T>, b: &ConvexSet<T>) -> Option<(Moebius<T>, T, T, T)> {
    let (g, inv, height) = horoball_frame(a);
    match b.transform(&inv) {
        ConvexSet::Horoball { center: BoundaryPoint::Finite(r), size } => Some((g, r, height, size)),
        _ => None,
    }
}

/// The unique nearest point of the set to `p`.
pub fn closest_point<T: Real>(a: &ConvexSet<T>, p: Point<T>) -> Point<T> {
    match *a {
        ConvexSet::PointSet(q) => q,
        ConvexSet::GeodesicLine(x, y) => closest_point_on_geodesic(x, y, p).unwrap_or(p),
        ConvexSet::Horoball { .. } => {
            let (g, inv, height) = horoball_frame(a);
            let w = inv.apply_point(p);
            if w.y >= height {
                p
            } else {
                g.apply_point(Point { x: w.x, y: height })
            }
        }
        ConvexSet::Disk { center, radius } => {
            if dist(p, center) <= radius {
                p
            } else {
                flow(tangent_towards(center, p), radius).base
            }
        }
    }
}

/// Oriented common perpendicular from `D'` to `D''`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommonPerp<T> {
    /// Initial vector, based on `∂D'`, pointing out of `D'`.
    pub u: UnitTangent<T>,
    /// Terminal vector, based on `∂D''`, pointing into `D''`.
    pub v: UnitTangent<T>,
    pub length: T,
}

impl<T: Real> CommonPerp<T> {
    pub fn reversed(&self) -> Self {
        Self { u: flip(self.v), v: flip(self.u), length: self.length }
    }

    pub fn transform(&self, g: &Moebius<T>) -> Self {
        Self { u: g.apply_tangent(self.u), v: g.apply_tangent(self.v), length: self.length }
    }

    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        self.u.approx_eq(&other.u, tol) && self.v.approx_eq(&other.v, tol) && (self.length - other.length).abs() <= tol
    }
}

/// Feet `(p ∈ ∂A, q ∈ ∂B)` of the common perpendicular.
fn feet<T: Real>(a: &ConvexSet<T>, b: &ConvexSet<T>) -> Option<(Point<T>, Point<T>)> {
    use ConvexSet::*;
    Some(match (*a, *b) {
        (PointSet(p), _) => (p, closest_point(b, p)),
        (_, PointSet(q)) => (closest_point(a, q), q),
        (Disk { center, radius }, _) => {
            let q = closest_point(b, center);
            (flow(tangent_towards(center, q), radius).base, q)
        }
        (_, Disk { center, radius }) => {
            let p = closest_point(a, center);
            (p, flow(tangent_towards(center, p), radius).base)
        }
        (GeodesicLine(x1, y1), GeodesicLine(x2, y2)) => {
            let (g, lo, hi) = geodesic_pair_frame(x1, y1, x2, y2)?;
            // orthogonal circle |z|² = lo·hi meets the semicircle over [lo, hi]
            let rr = lo * hi;
            let fx = T::two() * rr / (lo + hi);
            let fy = (rr - fx * fx).max(T::zero()).sqrt();
            (g.apply_point(Point::on_axis(rr.sqrt())), g.apply_point(Point { x: fx, y: fy }))
        }
        (GeodesicLine(x, y), Horoball { .. }) => {
            let (g, m, r, h) = geodesic_over_horoball(b, x, y)?;
            (g.apply_point(Point { x: m, y: r }), g.apply_point(Point { x: m, y: h }))
        }
        (Horoball { .. }, GeodesicLine(x, y)) => {
            let (g, m, r, h) = geodesic_over_horoball(a, x, y)?;
            (g.apply_point(Point { x: m, y: h }), g.apply_point(Point { x: m, y: r }))
        }
        (Horoball { .. }, Horoball { .. }) => {
            let (g, xi, h, diam) = horoball_pair(a, b)?;
            (g.apply_point(Point { x: xi, y: h }), g.apply_point(Point { x: xi, y: diam }))
        }
    })
}

pub fn common_perp<T: Real>(a: &ConvexSet<T>, b: &ConvexSet<T>) -> Result<CommonPerp<T>, ConvexError> {
    let length = set_dist(a, b);
    if !(length > T::lit(TOL.sets_too_close)) {
        return Err(ConvexError::SetsTooClose(length.to_f64().unwrap_or(0.0)));
    }
    let (p, q) = feet(a, b).ok_or(ConvexError::SetsTooClose(0.0))?;
    let u = tangent_towards(p, q);
    Ok(CommonPerp { u, v: flow(u, length), length })
}

/// The outward unit normal on `∂A` whose forward endpoint is `eta`.
pub fn normal_from_boundary<T: Real>(a: &ConvexSet<T>, eta: BoundaryPoint<T>) -> Result<UnitTangent<T>, ConvexError> {
    if a.boundary_contains(eta) {
        return Err(ConvexError::EndpointInSet);
    }
    Ok(match *a {
        ConvexSet::PointSet(p) => tangent_towards_boundary(p, eta),
        ConvexSet::Disk { center, radius } => flow(tangent_towards_boundary(center, eta), radius),
        ConvexSet::Horoball { .. } => {
            let (g, inv, h) = horoball_frame(a);
            let r = inv.apply_boundary(eta).finite().ok_or(ConvexError::EndpointInSet)?;
            g.apply_tangent(UnitTangent::downward(Point { x: r, y: h }))
        }
        ConvexSet::GeodesicLine(x, y) => {
            let (g, inv) = geodesic_frame(x, y)?;
            let r = inv.apply_boundary(eta).finite().ok_or(ConvexError::EndpointInSet)?;
            if r == T::zero() {
                return Err(ConvexError::EndpointInSet);
            }
            let angle = if r > T::zero() { T::zero() } else { T::PI() };
            g.apply_tangent(UnitTangent::new(Point::on_axis(r.abs()), angle))
        }
    })
}

/// Distance from a point to a set, used by translate enumeration.
pub fn point_set_dist<T: Real>(p: Point<T>, a: &ConvexSet<T>) -> T {
    set_dist(&ConvexSet::PointSet(p), a)
}
