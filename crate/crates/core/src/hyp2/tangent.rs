use super::{frame_for, BoundaryPoint, GeometryError, Moebius, Point};
use crate::real::Real;

/// Unit tangent vector: base point and direction angle in the Euclidean chart, in `[0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitTangent<T> {
    pub base: Point<T>,
    pub angle: T,
}

impl<T: Real> UnitTangent<T> {
    pub fn new(base: Point<T>, angle: T) -> Self {
        Self { base, angle: T::wrap_angle(angle) }
    }

    pub fn upward(base: Point<T>) -> Self {
        Self::new(base, T::FRAC_PI_2())
    }

    pub fn downward(base: Point<T>) -> Self {
        Self::new(base, T::FRAC_PI_2() + T::PI())
    }

    /// The isometry carrying the upward vector at `i` to `self`.
    pub fn frame(&self) -> Moebius<T> {
        let alpha = (T::FRAC_PI_2() - self.angle) * T::half();
        Moebius::from_nak(self.base.x, self.base.y, alpha)
    }

    /// Backward and forward endpoints `(v₋, v₊)` of the oriented geodesic.
    pub fn endpoints(&self) -> (BoundaryPoint<T>, BoundaryPoint<T>) {
        let alpha = (T::FRAC_PI_2() - self.angle) * T::half();
        let (sin, cos) = alpha.sin_cos();
        let snap = T::epsilon() * T::lit(8.0);
        let (x, y) = (self.base.x, self.base.y);
        let plus = if sin.abs() <= snap { BoundaryPoint::Infinity } else { BoundaryPoint::Finite(x + y * cos / sin) };
        let minus = if cos.abs() <= snap { BoundaryPoint::Infinity } else { BoundaryPoint::Finite(x - y * sin / cos) };
        (minus, plus)
    }

    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        self.base.approx_eq(&other.base, tol) && T::angle_diff(self.angle, other.angle).abs() <= tol
    }
}

/// Hopf coordinates `(v₋, v₊, s)` relative to `basepoint`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfCoords<T> {
    pub vminus: BoundaryPoint<T>,
    pub vplus: BoundaryPoint<T>,
    pub s: T,
    pub basepoint: Point<T>,
}

impl<T: Real> HopfCoords<T> {
    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        self.vminus.approx_eq(&other.vminus, tol)
            && self.vplus.approx_eq(&other.vplus, tol)
            && (self.s - other.s).abs() <= tol
            && self.basepoint.approx_eq(&other.basepoint, tol)
    }
}

pub fn hopf_coords<T: Real>(v: UnitTangent<T>, base: Point<T>) -> HopfCoords<T> {
    let (vminus, vplus) = v.endpoints();
    let w = v.frame().inverse().apply_point(base);
    // closest point to `base` on the geodesic sits at i|w| in the frame; π(v) sits at i.
    let s = -w.x.hypot(w.y).ln();
    HopfCoords { vminus, vplus, s, basepoint: base }
}

pub fn vector_from_hopf<T: Real>(h: HopfCoords<T>) -> Result<UnitTangent<T>, GeometryError> {
    let g = frame_for(h.vminus, h.vplus)?;
    let w = g.inverse().apply_point(h.basepoint);
    let r = w.x.hypot(w.y);
    Ok(g.apply_tangent(UnitTangent::upward(Point::on_axis(r * h.s.exp()))))
}

/// Geodesic flow for time `t` (backwards when `t < 0`).
pub fn flow<T: Real>(v: UnitTangent<T>, t: T) -> UnitTangent<T> {
    if t == T::zero() {
        return v;
    }
    v.frame().apply_tangent(UnitTangent::upward(Point::on_axis(t.exp())))
}

/// Direction angle at `i` of the geodesic toward `w`, read off the disk model:
/// the Cayley map `(z - i)/(z + i)` rotates tangents at `i` by `-π/2`.
fn angle_at_i_towards<T: Real>(re: T, im: T) -> T {
    // ζ = (w - i)/(w + i) up to a positive factor: (w - i)·conj(w + i)
    let zr = re * re + im * im - T::one();
    let zi = -T::two() * re;
    zi.atan2(zr) + T::FRAC_PI_2()
}

/// Unit vector at `a` pointing along the geodesic toward `b != a`.
pub fn tangent_towards<T: Real>(a: Point<T>, b: Point<T>) -> UnitTangent<T> {
    let g = Moebius::from_nak(a.x, a.y, T::zero());
    let w = g.inverse().apply_point(b);
    g.apply_tangent(UnitTangent::new(Point::i(), angle_at_i_towards(w.x, w.y)))
}

/// Unit vector at `a` whose forward endpoint is `eta`.
pub fn tangent_towards_boundary<T: Real>(a: Point<T>, eta: BoundaryPoint<T>) -> UnitTangent<T> {
    let g = Moebius::from_nak(a.x, a.y, T::zero());
    let angle = match g.inverse().apply_boundary(eta) {
        BoundaryPoint::Infinity => T::FRAC_PI_2(),
        BoundaryPoint::Finite(r) => angle_at_i_towards(r, T::zero()),
    };
    g.apply_tangent(UnitTangent::new(Point::i(), angle))
}

/// The opposite vector `-v`.
pub fn flip<T: Real>(v: UnitTangent<T>) -> UnitTangent<T> {
    UnitTangent::new(v.base, v.angle + T::PI())
}
