//! Potentials on the unit tangent bundle of the modular surface: amplitudes,
//! critical exponents of potentials, Gibbs cocycles.
//!
//! Non-constant potentials are functions of the height of the base point after
//! reduction into the modular domain, which is the largest imaginary part in the
//! `PSL2(Z)` orbit. They are therefore invariant under `PSL2(Z)` and every
//! subgroup, and Lipschitz for the hyperbolic metric since `|d ln y| ≤ ds`.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::CommonPerp;
use crate::hyp2::{busemann, dist, flow, tangent_towards, tangent_towards_boundary, BoundaryPoint, MoebiusInt, Point, UnitTangent};
use crate::lattice::{ball_with_displacements, growth_from_annuli, modular_reduce, GrowthEstimate, LatticeError, LatticeGroup};
use crate::measures::MeasureContext;

#[derive(Debug, Error)]
pub enum GibbsError {
    #[error("Gibbs cocycle not converged: horizons differ by {0:e}")]
    NotConverged(f64),
    #[error("unsupported potential: {0}")]
    UnsupportedPotential(String),
    #[error("invalid potential: {0}")]
    Invalid(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

type Result<T> = std::result::Result<T, GibbsError>;

/// A bounded invariant potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Constant { c: f64 },
    /// `f(y) = amplitude · exp(-(ln y - center)² / (2 width²))` of the reduced height `y`.
    HeightBand {
        amplitude: f64,
        center: f64,
        width: f64,
        /// Declared bound; must dominate `|amplitude|`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bound: Option<f64>,
    },
}

impl Potential {
    pub fn constant(c: f64) -> Self {
        Potential::Constant { c }
    }

    pub fn height_band(amplitude: f64, center: f64, width: f64) -> Self {
        Potential::HeightBand { amplitude, center, width, bound: None }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Potential::Constant { c } if c.is_finite() => Ok(()),
            Potential::Constant { .. } => Err(GibbsError::Invalid("non-finite constant".into())),
            Potential::HeightBand { amplitude, center, width, bound } => {
                if !(amplitude.is_finite() && center.is_finite() && width.is_finite() && width > 0.0) {
                    return Err(GibbsError::Invalid("height band needs finite parameters and width > 0".into()));
                }
                match bound {
                    Some(b) if b < amplitude.abs() => Err(GibbsError::Invalid(format!("declared bound {b} below |amplitude| {}", amplitude.abs()))),
                    _ => Ok(()),
                }
            }
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Potential::Constant { c } => Some(c),
            _ => None,
        }
    }

    /// `sup |F|`.
    pub fn bound(&self) -> f64 {
        match *self {
            Potential::Constant { c } => c.abs(),
            Potential::HeightBand { amplitude, bound, .. } => bound.unwrap_or(amplitude.abs()),
        }
    }

    /// Lipschitz constant for the distance of base points.
    pub fn holder_constant(&self) -> f64 {
        match *self {
            Potential::Constant { .. } => 0.0,
            Potential::HeightBand { amplitude, width, .. } => amplitude.abs() / (width * std::f64::consts::E.sqrt()),
        }
    }

    /// Value as a function of the reduced height.
    pub fn at_height(&self, y: f64) -> f64 {
        match *self {
            Potential::Constant { c } => c,
            Potential::HeightBand { amplitude, center, width, .. } => {
                let u = (y.ln() - center) / width;
                amplitude * (-0.5 * u * u).exp()
            }
        }
    }

    pub fn eval(&self, v: UnitTangent<f64>) -> Result<f64> {
        match *self {
            Potential::Constant { c } => Ok(c),
            _ => Ok(self.at_height(modular_reduce(v.base)?.0.y)),
        }
    }

    /// `F∘ι`. Both kinds only see the base point, so this is `F` itself.
    pub fn flipped(&self) -> Potential {
        self.clone()
    }

    pub fn label(&self) -> String {
        match *self {
            Potential::Constant { c } => format!("constant({c})"),
            Potential::HeightBand { amplitude, center, width, .. } => format!("height_band({amplitude},{center},{width})"),
        }
    }
}

fn gl8() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(8).expect("positive")).as_node_weight_pairs().to_vec())
}

/// Reduction of a vector into the modular domain, returning the reduced vector.
fn reduce_tangent(v: UnitTangent<f64>) -> Result<UnitTangent<f64>> {
    let (_, gamma) = modular_reduce(v.base)?;
    Ok(gamma.inverse().to_real::<f64>().apply_tangent(v))
}

const CHUNK: f64 = 1.0;
const PIECE: f64 = 0.25;
const KINK_WIDTH: f64 = 1e-7;

type Branch = (i64, i64);

/// Integrand along one chunk: the geodesic `s ↦ M·(i eˢ)` through a reduced vector.
struct Chunk<'a> {
    frame: crate::hyp2::Moebius<f64>,
    potential: &'a Potential,
}

impl Chunk<'_> {
    fn point(&self, s: f64) -> Point<f64> {
        self.frame.apply_point(Point::on_axis(s.exp()))
    }

    /// Reducing element modulo right translations, which do not change heights:
    /// `Im(γ⁻¹z) = y/|a - cz|²` only sees the first column.
    fn branch(&self, s: f64) -> Result<Branch> {
        let g = modular_reduce(self.point(s))?.1;
        Ok((g.a, g.c))
    }

    /// Gauss rule on `[a, b]`, with heights read through a fixed branch when given.
    fn gauss(&self, a: f64, b: f64, branch: Option<&Branch>) -> Result<f64> {
        let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
        let mut acc = 0.0;
        for &(x, w) in gl8() {
            let z = self.point(mid + half * x);
            let y = match branch {
                Some(&(a, c)) => {
                    let (a, c) = (a as f64, c as f64);
                    z.y / ((a - c * z.x).powi(2) + (c * z.y).powi(2))
                }
                None => modular_reduce(z)?.0.y,
            };
            acc += w * self.potential.at_height(y);
        }
        Ok(acc * half)
    }

    /// The reduced height is smooth away from the points where the reducing
    /// element changes; those are isolated by bisection.
    fn piece(&self, a: f64, b: f64, ga: &Branch, gb: &Branch) -> Result<f64> {
        let m = (a + b) / 2.0;
        let gm = self.branch(m)?;
        if ga == gb && gm == *ga {
            return self.gauss(a, b, Some(ga));
        }
        if b - a < KINK_WIDTH {
            return self.gauss(a, b, None);
        }
        Ok(self.piece(a, m, ga, &gm)? + self.piece(m, b, &gm, gb)?)
    }

    fn integrate(&self, len: f64) -> Result<f64> {
        let n = (len / PIECE).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let mut total = 0.0;
        let mut ga = self.branch(0.0)?;
        for k in 0..n {
            let (a, b) = (k as f64 * h, if k + 1 == n { len } else { (k + 1) as f64 * h });
            let gb = self.branch(b)?;
            total += self.piece(a, b, &ga, &gb)?;
            ga = gb;
        }
        Ok(total)
    }
}

/// `∫₀^len F(gˢ v) ds`.
///
/// The flow is restarted from a reduced vector after every unit of time, so
/// points deep in the cusp or near the boundary never appear in the chart.
fn integrate_reduced(p: &Potential, v: UnitTangent<f64>, len: f64) -> Result<f64> {
    let mut w = reduce_tangent(v)?;
    let mut done = 0.0;
    let mut total = 0.0;
    while done < len {
        let step = CHUNK.min(len - done);
        total += Chunk { frame: w.frame(), potential: p }.integrate(step)?;
        w = reduce_tangent(flow(w, step))?;
        done += step;
    }
    Ok(total)
}

/// Boundary point carried exactly: `p/q` with `q = 0` for infinity.
#[derive(Debug, Clone, Copy)]
struct ExactBoundary {
    p: i128,
    q: i128,
}

impl ExactBoundary {
    fn new(xi: BoundaryPoint<f64>) -> Result<Self> {
        use num_traits::float::FloatCore;
        let r = match xi {
            BoundaryPoint::Infinity => return Ok(ExactBoundary { p: 1, q: 0 }),
            BoundaryPoint::Finite(r) => r,
        };
        if r == 0.0 {
            return Ok(ExactBoundary { p: 0, q: 1 });
        }
        let (m, e, sign) = FloatCore::integer_decode(r);
        let m = m as i128 * sign as i128;
        let shift = m.trailing_zeros() as i32;
        let (m, e) = (m >> shift, e as i32 + shift);
        let too_far = || GibbsError::Lattice(LatticeError::Overflow);
        if e >= 0 {
            let p = m.checked_shl(e as u32).filter(|_| e < 70).ok_or_else(too_far)?;
            Ok(ExactBoundary { p, q: 1 })
        } else if e > -100 {
            Ok(ExactBoundary { p: m, q: 1i128 << (-e) })
        } else {
            Err(too_far())
        }
    }

    /// Image under `g⁻¹ = [d -b; -c a]`.
    fn pull_back(self, g: &MoebiusInt) -> Result<Self> {
        let ovf = || GibbsError::Lattice(LatticeError::Overflow);
        let lin = |u: i64, v: i64| -> Result<i128> {
            (u as i128).checked_mul(self.p).and_then(|x| (v as i128).checked_mul(self.q).and_then(|y| x.checked_add(y))).ok_or_else(ovf)
        };
        let (mut p, mut q) = (lin(g.d, -g.b)?, lin(-g.c, g.a)?);
        let k = num_integer::Integer::gcd(&p, &q);
        if k > 1 {
            p /= k;
            q /= k;
        }
        if q < 0 || (q == 0 && p < 0) {
            p = -p;
            q = -q;
        }
        Ok(ExactBoundary { p, q })
    }

    fn to_f64(self) -> BoundaryPoint<f64> {
        if self.q == 0 {
            BoundaryPoint::Infinity
        } else {
            BoundaryPoint::Finite(self.p as f64 / self.q as f64)
        }
    }
}

/// Ray toward a boundary point, followed in the reduced chart and re-aimed at
/// the exact image of the endpoint after every chunk. Forward flow alone would
/// amplify rounding by `eᵗ` in the unstable direction.
struct Ray<'a> {
    potential: &'a Potential,
    base: Point<f64>,
    xi: ExactBoundary,
}

impl<'a> Ray<'a> {
    fn new(potential: &'a Potential, x: Point<f64>, xi: BoundaryPoint<f64>) -> Result<Self> {
        let mut r = Ray { potential, base: x, xi: ExactBoundary::new(xi)? };
        r.rebase(x)?;
        Ok(r)
    }

    fn rebase(&mut self, z: Point<f64>) -> Result<()> {
        let (w, g) = modular_reduce(z)?;
        self.xi = self.xi.pull_back(&g)?;
        self.base = w;
        Ok(())
    }

    /// Integral over the next `len` units of time.
    fn advance(&mut self, len: f64) -> Result<f64> {
        let mut done = 0.0;
        let mut total = 0.0;
        while done < len {
            let step = CHUNK.min(len - done);
            let v = tangent_towards_boundary(self.base, self.xi.to_f64());
            total += Chunk { frame: v.frame(), potential: self.potential }.integrate(step)?;
            self.rebase(flow(v, step).base)?;
            done += step;
        }
        Ok(total)
    }
}

/// Amplitude along the geodesic segment of length `len` starting with `v`.
pub fn amplitude_vector(v: UnitTangent<f64>, len: f64, f: &Potential) -> Result<f64> {
    if len <= 0.0 {
        return Ok(0.0);
    }
    match *f {
        Potential::Constant { c } => Ok(c * len),
        _ => integrate_reduced(f, v, len),
    }
}

/// `∫_x^y F`.
pub fn amplitude(x: Point<f64>, y: Point<f64>, f: &Potential) -> Result<f64> {
    if x == y {
        return Ok(0.0);
    }
    amplitude_vector(tangent_towards(x, y), dist(x, y), f)
}

pub fn amplitude_along(perp: &CommonPerp<f64>, f: &Potential) -> Result<f64> {
    amplitude_vector(perp.u, perp.length, f)
}

/// Growth rate of `Σ_{n-1 < d(x0, γx0) ≤ n} exp(∫_{x0}^{γx0} F)`, from the last
/// whole annulus below `t_max`.
pub fn delta_f_estimate(g: &LatticeGroup, f: &Potential, x0: Point<f64>, t_max: f64) -> Result<GrowthEstimate> {
    if !(t_max >= 4.0) {
        return Err(GibbsError::Invalid("t_max must be at least 4".into()));
    }
    let n = t_max.floor() as usize;
    let ball = ball_with_displacements(g, x0, n as f64)?;
    let amps: Vec<(f64, f64)> = match *f {
        Potential::Constant { c } => ball.iter().map(|&(_, d)| (d, c * d)).collect(),
        _ => ball
            .par_iter()
            .map(|(m, d)| {
                let y = m.to_real::<f64>().apply_point(x0);
                let a = if *d > 0.0 { amplitude_vector(tangent_towards(x0, y), *d, f)? } else { 0.0 };
                Ok((*d, a))
            })
            .collect::<Result<_>>()?,
    };
    let mut sums = vec![0.0; n];
    let mut counts = vec![0.0; n];
    for (d, a) in amps {
        if d > 0.0 && d <= n as f64 {
            let k = (d.ceil() as usize).max(1) - 1;
            sums[k] += a.exp();
            counts[k] += 1.0;
        }
    }
    Ok(growth_from_annuli(&sums, &counts))
}

/// A potential with its critical exponent.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsContext {
    pub potential: Potential,
    pub delta_f: f64,
    pub uncertainty: f64,
    pub flip_potential: Potential,
    /// Horizon of the truncated limit defining the cocycle.
    pub horizon: f64,
    pub tolerance: f64,
}

pub const DEFAULT_HORIZON: f64 = 30.0;
pub const DEFAULT_COCYCLE_TOL: f64 = 1e-6;

impl GibbsContext {
    /// For constant potentials `δ_F = δ + c` with `δ = 1`; otherwise estimated
    /// from the orbit of `x0` (the growth estimate's `log_ratio`, with its uncertainty).
    pub fn new(g: &LatticeGroup, f: Potential, x0: Point<f64>, t_max: f64) -> Result<Self> {
        f.validate()?;
        let (delta_f, uncertainty) = match f.constant_value() {
            Some(c) => (crate::lattice::critical_exponent(g) + c, 0.0),
            None => {
                let e = delta_f_estimate(g, &f, x0, t_max)?;
                (e.log_ratio, e.uncertainty)
            }
        };
        Ok(Self::with_delta(f, delta_f, uncertainty))
    }

    pub fn with_delta(f: Potential, delta_f: f64, uncertainty: f64) -> Self {
        let flip_potential = f.flipped();
        GibbsContext { potential: f, delta_f, uncertainty, flip_potential, horizon: DEFAULT_HORIZON, tolerance: DEFAULT_COCYCLE_TOL }
    }

    pub fn constant(c: f64) -> Self {
        Self::with_delta(Potential::constant(c), 1.0 + c, 0.0)
    }
}

/// `C_ξ(x, y) = lim ∫_y^{ξ_t}(F - δ_F) - ∫_x^{ξ_t}(F - δ_F)`.
///
/// For non-constant potentials the limit is truncated by integrating along the
/// rays from `x` and `y` to `ξ`, for time `T + ℓ` and `T + ℓ - β_ξ(x, y)`
/// respectively, so that both endpoints sit on the same horosphere at distance
/// `O(e^{-T})`; `ℓ` is the time the rays need to come within unit distance.
pub fn gibbs_cocycle(xi: BoundaryPoint<f64>, x: Point<f64>, y: Point<f64>, ctx: &GibbsContext) -> Result<f64> {
    let b = busemann(xi, x, y);
    if let Some(c) = ctx.potential.constant_value() {
        return Ok((ctx.delta_f - c) * b);
    }
    if x == y {
        return Ok(0.0);
    }
    let half = ctx.horizon / 2.0;
    let lead = horocyclic_lead(xi, x, y);
    if half + lead - b <= 0.0 || half + b <= 0.0 {
        return Err(GibbsError::Invalid(format!("horizon {} too short for Busemann gap {b}", ctx.horizon)));
    }
    let p = &ctx.potential;
    let (mut rx, mut ry) = (Ray::new(p, x, xi)?, Ray::new(p, y, xi)?);
    let (ax1, ay1) = (rx.advance(half + lead)?, ry.advance(half + lead - b)?);
    let (ax2, ay2) = (rx.advance(half)?, ry.advance(half)?);
    let short = ay1 - ax1 + ctx.delta_f * b;
    let long = short + ay2 - ax2;
    let gap = (long - short).abs();
    if gap > ctx.tolerance {
        return Err(GibbsError::NotConverged(gap));
    }
    Ok(long)
}

/// Time along the ray from `x` to `ξ` after which the ray from `y` is within unit
/// distance of it: the log of their separation along the horosphere through `x`.
/// Horizons are counted from there.
fn horocyclic_lead(xi: BoundaryPoint<f64>, x: Point<f64>, y: Point<f64>) -> f64 {
    // chart sending ξ to ∞ by z ↦ -1/(z - ξ)
    let to_inf = |z: Point<f64>| match xi {
        BoundaryPoint::Infinity => (z.x, z.y),
        BoundaryPoint::Finite(r) => {
            let (u, v) = (z.x - r, z.y);
            let n = u * u + v * v;
            (-u / n, v / n)
        }
    };
    let ((ax, ay), (bx, _)) = (to_inf(x), to_inf(y));
    ((ax - bx).abs() / ay).ln().max(0.0)
}

/// Measure context of the Gibbs measure of a constant potential: the Gibbs
/// cocycle of `c` is the Busemann cocycle, so all masses are those of `base` and
/// only the exponent moves by `c`.
pub fn weighted_context(ctx: &GibbsContext, base: &MeasureContext) -> Result<MeasureContext> {
    match ctx.potential.constant_value() {
        Some(c) => {
            let mut out = base.clone();
            out.delta = base.delta + c;
            Ok(out)
        }
        None => Err(GibbsError::UnsupportedPotential(format!("{} has no closed-form Patterson density", ctx.potential.label()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::{common_perp, ConvexSet};
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point<f64> {
        Point::new(x, y).unwrap()
    }

    fn band() -> Potential {
        Potential::height_band(0.4, 0.5, 0.6)
    }

    /// Composite Simpson on `[a, b]` with `n` (even) intervals.
    fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn constant_amplitudes() {
        let f = Potential::constant(0.7);
        let (x, y) = (p(0.3, 1.2), p(-2.0, 0.4));
        assert_eq!(amplitude(x, y, &f).unwrap(), 0.7 * dist(x, y));
        assert_eq!(amplitude(x, x, &band()).unwrap(), 0.0);
    }

    #[test]
    fn vertical_oracle() {
        let f = band();
        let a = amplitude(p(0.0, 1.5), p(0.0, 9.0), &f).unwrap();
        let want = simpson(1.5f64.ln(), 9.0f64.ln(), 20_000, |u| f.at_height(u.exp()));
        assert!((a - want).abs() < 1e-11, "{a} {want}");
        // below the unit circle the height is 1/y
        let b = amplitude(p(0.0, 4.0), p(0.0, 0.125), &f).unwrap();
        let want = simpson(0.125f64.ln(), 0.0, 20_000, |u| f.at_height((-u).exp())) + simpson(0.0, 4.0f64.ln(), 20_000, |u| f.at_height(u.exp()));
        assert!((b - want).abs() < 1e-11, "{b} {want}");
    }

    #[test]
    fn along_perp_matches_endpoints() {
        let f = band();
        let perp = common_perp(&ConvexSet::geodesic(BoundaryPoint::Finite(-0.3), BoundaryPoint::Finite(0.2)).unwrap(), &ConvexSet::horoball(BoundaryPoint::Finite(3.0), 0.1).unwrap()).unwrap();
        let a = amplitude_along(&perp, &f).unwrap();
        let b = amplitude(perp.u.base, perp.v.base, &f).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} {b}");
        assert_eq!(amplitude_along(&perp, &Potential::constant(0.3)).unwrap(), 0.3 * perp.length);
    }

    #[test]
    fn validation_and_flip() {
        assert!(Potential::HeightBand { amplitude: 1.0, center: 0.0, width: 1.0, bound: Some(0.5) }.validate().is_err());
        assert!(Potential::height_band(1.0, 0.0, 0.0).validate().is_err());
        assert!(band().validate().is_ok());
        assert_eq!(band().flipped(), band());
        let ctx = GibbsContext::constant(0.3);
        assert_eq!(ctx.delta_f, 1.3);
        let toml_form: Potential = serde_json::from_str(r#"{"kind":"height_band","amplitude":0.4,"center":0.5,"width":0.6}"#).unwrap();
        assert_eq!(toml_form, band());
    }

    #[test]
    fn delta_f_estimates() {
        let g = LatticeGroup::psl2z();
        let x0 = p(0.0, 2.0);
        let e0 = delta_f_estimate(&g, &Potential::constant(0.0), x0, 8.0).unwrap();
        let c = 0.3;
        let ec = delta_f_estimate(&g, &Potential::constant(c), x0, 8.0).unwrap();
        assert!((ec.estimate - e0.estimate - c).abs() <= c / 8.0);
        let f = band();
        let ef = delta_f_estimate(&g, &f, x0, 8.0).unwrap();
        let efi = delta_f_estimate(&g, &f.flipped(), x0, 8.0).unwrap();
        assert_eq!(ef, efi);
        // amplitudes lie in [-a d, a d] and d ≤ n on the last annulus
        assert!((ef.estimate - e0.estimate).abs() <= f.bound() + 1e-12);
        assert!(ef.estimate > e0.estimate, "positive band raises the exponent");
        assert!(delta_f_estimate(&g, &f, x0, 3.0).is_err());
    }

    #[test]
    fn constant_cocycles() {
        let (x, y) = (p(0.2, 0.7), p(-1.0, 3.0));
        for xi in [BoundaryPoint::Infinity, BoundaryPoint::Finite(0.37)] {
            let b = busemann(xi, x, y);
            assert_eq!(gibbs_cocycle(xi, x, y, &GibbsContext::constant(0.0)).unwrap(), b);
            assert!((gibbs_cocycle(xi, x, y, &GibbsContext::constant(0.3)).unwrap() - b).abs() < 1e-12);
            assert_eq!(gibbs_cocycle(xi, x, x, &GibbsContext::with_delta(band(), 1.05, 0.0)).unwrap(), 0.0);
        }
    }

    #[test]
    fn height_band_cocycle_converges() {
        let ctx = GibbsContext::with_delta(band(), 1.05, 0.0);
        let (x, y) = (p(0.1, 1.3), p(0.4, 0.6));
        for xi in [BoundaryPoint::Infinity, BoundaryPoint::Finite(0.0), BoundaryPoint::Finite(std::f64::consts::SQRT_2 - 1.0)] {
            let c = gibbs_cocycle(xi, x, y, &ctx).unwrap();
            assert!(c.is_finite());
        }
        // towards the cusp at ∞ the integrand is eventually -δ_F on both rays
        let mut tight = ctx.clone();
        tight.horizon = 2.0;
        tight.tolerance = 1e-14;
        assert!(matches!(gibbs_cocycle(BoundaryPoint::Finite(0.3), x, y, &tight), Err(GibbsError::NotConverged(_))));
    }

    #[test]
    fn weighted_contexts() {
        use crate::measures::{MeasureContext, QuadratureSpec};
        let g = LatticeGroup::psl2z();
        let base = MeasureContext::build(&g, QuadratureSpec::default().coarse(), &[]).unwrap();
        assert_eq!(weighted_context(&GibbsContext::constant(0.0), &base).unwrap(), base);
        let w = weighted_context(&GibbsContext::constant(0.3), &base).unwrap();
        assert_eq!(w.bm_total, base.bm_total);
        assert_eq!(w.skinning_totals, base.skinning_totals);
        assert_eq!(w.delta, 1.3);
        assert_eq!(weighted_context(&GibbsContext::constant(-0.3), &w).unwrap(), base);
        assert!(matches!(weighted_context(&GibbsContext::with_delta(band(), 1.0, 0.0), &base), Err(GibbsError::UnsupportedPotential(_))));
    }

    fn arb_point() -> impl Strategy<Value = Point<f64>> {
        (-1.5f64..1.5, -1.0f64..1.0).prop_map(|(x, ly)| p(x, ly.exp()))
    }

    fn arb_boundary() -> impl Strategy<Value = BoundaryPoint<f64>> {
        prop_oneof![Just(BoundaryPoint::Infinity), (-2.0f64..2.0).prop_map(BoundaryPoint::Finite)]
    }

    fn arb_word() -> impl Strategy<Value = MoebiusInt> {
        proptest::collection::vec((any::<bool>(), -2i64..=2), 0..4).prop_map(|w| {
            w.into_iter().fold(MoebiusInt::IDENTITY, |g, (s, n)| {
                let step = if s { MoebiusInt::S } else { MoebiusInt::t_power(n) };
                g.compose(&step).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn split_additivity(x in arb_point(), angle in 0.0f64..6.28, len in 0.5f64..6.0, frac in 0.05f64..0.95) {
            let f = band();
            let v = UnitTangent::new(x, angle);
            let whole = amplitude_vector(v, len, &f).unwrap();
            let s = frac * len;
            let parts = amplitude_vector(v, s, &f).unwrap() + amplitude_vector(flow(v, s), len - s, &f).unwrap();
            prop_assert!((whole - parts).abs() < 1e-9, "{} {}", whole, parts);
            prop_assert!(whole.abs() <= f.bound() * len + 1e-12);
        }

        #[test]
        fn cocycle_additive_and_equivariant(xi in arb_boundary(), x in arb_point(), y in arb_point(), z in arb_point(), g in arb_word()) {
            let ctx = GibbsContext::with_delta(band(), 1.05, 0.0);
            let cxy = gibbs_cocycle(xi, x, y, &ctx).unwrap();
            let cyz = gibbs_cocycle(xi, y, z, &ctx).unwrap();
            let cxz = gibbs_cocycle(xi, x, z, &ctx).unwrap();
            prop_assert!((cxz - cxy - cyz).abs() < 1e-8, "{} {} {}", cxz, cxy, cyz);
            let m = g.to_real::<f64>();
            let moved = gibbs_cocycle(m.apply_boundary(xi), m.apply_point(x), m.apply_point(y), &ctx).unwrap();
            prop_assert!((moved - cxy).abs() < 1e-8, "{} {}", moved, cxy);
        }
    }
}
