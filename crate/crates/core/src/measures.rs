//! Patterson–Sullivan and Bowen–Margulis measures, skinning measures, and
//! quadrature of test functions on the unit tangent bundle of `Γ\H²`.
//!
//! Each `μ_x` is the round measure of mass `2π` pushed from the circle of
//! directions at `x` to the boundary. Integrals over `T¹M` are computed in
//! `(Re z, Im z, angle)` coordinates on the fundamental domain; the density of
//! the Bowen–Margulis measure in these coordinates is obtained from the Hopf
//! parametrisation through a numerical Jacobian.

use crate::convex::{normal_from_boundary, ConvexError, ConvexSet};
use crate::hyp2::{busemann, flip, hopf_coords, vector_from_hopf, BoundaryPoint, HopfCoords, Moebius, Point, UnitTangent};
use crate::lattice::{geodesic_reversal, geodesic_stabilizer, level2_coset_reps, point_stabilizer, reduce_vector, LatticeError, LatticeGroup, Reduction};
use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::num::NonZeroUsize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("quadrature diverged: {0}")]
    QuadratureDiverged(String),
    #[error("unsupported set: {0}")]
    UnsupportedSet(&'static str),
    #[error("endpoints coincide")]
    EqualEndpoints,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error("cache: {0}")]
    Cache(String),
}

type Result<T> = std::result::Result<T, MeasureError>;

/// Boundary charts: the real line, or `η = -1/ξ` around infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    Finite,
    AtInfinity,
}

impl Chart {
    pub fn choose(xi: BoundaryPoint<f64>) -> Self {
        match xi {
            BoundaryPoint::Finite(r) if r.abs() <= 1.0 => Chart::Finite,
            _ => Chart::AtInfinity,
        }
    }

    pub fn coordinate(self, xi: BoundaryPoint<f64>) -> f64 {
        match (self, xi) {
            (Chart::Finite, BoundaryPoint::Finite(r)) => r,
            (Chart::Finite, BoundaryPoint::Infinity) => f64::INFINITY,
            (Chart::AtInfinity, BoundaryPoint::Finite(r)) => -1.0 / r,
            (Chart::AtInfinity, BoundaryPoint::Infinity) => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Pushforward of the round measure of mass `2π`.
    #[serde(rename = "round-2pi")]
    Round2Pi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PattersonDensity {
    pub normalization: Normalization,
    pub delta: f64,
    /// Overall factor; 1 for the round normalization.
    pub scale: f64,
}

impl Default for PattersonDensity {
    fn default() -> Self {
        Self { normalization: Normalization::Round2Pi, delta: 1.0, scale: 1.0 }
    }
}

impl PattersonDensity {
    /// Density of `μ_x` at `ξ`: in the real chart for finite `ξ`, in the `-1/ξ` chart at infinity.
    pub fn density(&self, x: Point<f64>, xi: BoundaryPoint<f64>) -> f64 {
        match xi {
            BoundaryPoint::Finite(r) => self.in_chart(x, Chart::Finite, r),
            BoundaryPoint::Infinity => self.in_chart(x, Chart::AtInfinity, 0.0),
        }
    }

    pub fn in_chart(&self, x: Point<f64>, chart: Chart, u: f64) -> f64 {
        let w = match chart {
            Chart::Finite => 2.0 * x.y / ((u - x.x).powi(2) + x.y * x.y),
            Chart::AtInfinity => 2.0 * x.y / ((1.0 + x.x * u).powi(2) + (x.y * u).powi(2)),
        };
        self.scale * w
    }
}

pub fn ps_density(x: Point<f64>, xi: BoundaryPoint<f64>) -> f64 {
    PattersonDensity::default().density(x, xi)
}

/// Density of `m̃_BM` with respect to `dμ_{x*}(v₋) dμ_{x*}(v₊) dt`.
pub fn bm_density(h: &HopfCoords<f64>) -> Result<f64> {
    bm_density_with(&PattersonDensity::default(), h)
}

pub fn bm_density_with(dens: &PattersonDensity, h: &HopfCoords<f64>) -> Result<f64> {
    let v = vector_from_hopf(*h).map_err(|_| MeasureError::EqualEndpoints)?;
    let b = busemann(h.vminus, v.base, h.basepoint) + busemann(h.vplus, v.base, h.basepoint);
    Ok((-dens.delta * b).exp())
}

/// Density of `m̃_BM` per `dx dy dθ` at `v`, computed from the Hopf parametrisation at `x*`.
pub fn liouville_density(dens: &PattersonDensity, v: UnitTangent<f64>, basepoint: Point<f64>) -> f64 {
    let h = hopf_coords(v, basepoint);
    let (cm, cp) = (Chart::choose(h.vminus), Chart::choose(h.vplus));
    let coords = |dx: f64, dy: f64, dth: f64| {
        let w = UnitTangent::new(Point { x: v.base.x + dx, y: v.base.y + dy }, v.angle + dth);
        let k = hopf_coords(w, basepoint);
        [cm.coordinate(k.vminus), cp.coordinate(k.vplus), k.s]
    };
    let hs = 1e-5 * v.base.y;
    let ha = 1e-5;
    let col = |e: [f64; 3], step: f64| {
        let f = coords(e[0] * step, e[1] * step, e[2] * step);
        let b = coords(-e[0] * step, -e[1] * step, -e[2] * step);
        [(f[0] - b[0]) / (2.0 * step), (f[1] - b[1]) / (2.0 * step), (f[2] - b[2]) / (2.0 * step)]
    };
    let (jx, jy, jt) = (col([1.0, 0.0, 0.0], hs), col([0.0, 1.0, 0.0], hs), col([0.0, 0.0, 1.0], ha));
    let det = jx[0] * (jy[1] * jt[2] - jy[2] * jt[1]) - jy[0] * (jx[1] * jt[2] - jx[2] * jt[1])
        + jt[0] * (jx[1] * jy[2] - jx[2] * jy[1]);
    let bm = bm_density_with(dens, &h).unwrap_or(0.0);
    bm * dens.in_chart(basepoint, cm, cm.coordinate(h.vminus)) * dens.in_chart(basepoint, cp, cp.coordinate(h.vplus)) * det.abs()
}

/// Quadrature orders and truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    /// Gauss–Legendre nodes per panel in each coordinate.
    pub x_order: usize,
    pub y_order: usize,
    pub theta_order: usize,
    /// Panels across the full range of each coordinate.
    pub x_panels: usize,
    pub theta_panels: usize,
    /// Ratio between consecutive height breakpoints.
    pub y_ratio: f64,
    /// Height above which the cusp is handled by the tail formula.
    pub y_cutoff: f64,
    /// Nodes for boundary (skinning) quadrature.
    pub boundary_nodes: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { x_order: 8, y_order: 8, theta_order: 8, x_panels: 8, theta_panels: 6, y_ratio: 1.3, y_cutoff: 10.0, boundary_nodes: 512 }
    }
}

impl QuadratureSpec {
    pub fn coarse(&self) -> Self {
        Self { x_order: self.x_order / 2 + 1, y_order: self.y_order / 2 + 1, theta_order: self.theta_order / 2 + 1, ..*self }
    }
}

fn rule(n: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(NonZeroUsize::new(n.max(1)).expect("positive")).as_node_weight_pairs().to_vec()
}

/// Composite Gauss–Legendre nodes on `[a, b]` split at `breaks`.
fn composite(breaks: &[f64], order: usize) -> Vec<(f64, f64)> {
    let r = rule(order);
    let mut out = Vec::with_capacity(order * breaks.len());
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
        out.extend(r.iter().map(|&(x, wt)| (m + h * x, h * wt)));
    }
    out
}

fn uniform_breaks(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
}

/// A box in `(Re z, Im z, angle)`, intersected with the modular domain when integrating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub angle: [f64; 2],
}

impl Region {
    pub fn domain(y_max: f64) -> Self {
        Self { x: [-0.5, 0.5], y: [0.0, y_max], angle: [0.0, TAU] }
    }

    fn union(&self, o: &Region) -> Region {
        Region {
            x: [self.x[0].min(o.x[0]), self.x[1].max(o.x[1])],
            y: [self.y[0].min(o.y[0]), self.y[1].max(o.y[1])],
            angle: [self.angle[0].min(o.angle[0]), self.angle[1].max(o.angle[1])],
        }
    }
}

/// The coset pieces `r F` tiling a fundamental domain of the group.
fn coset_pieces(g: &LatticeGroup) -> Result<Vec<Moebius<f64>>> {
    match g.reduction {
        Some(Reduction::Modular) => Ok(vec![Moebius::identity()]),
        Some(Reduction::Level2) => Ok(level2_coset_reps().iter().map(|r| r.to_real()).collect()),
        None => Err(LatticeError::NoReductionRule(g.name.clone()).into()),
    }
}

/// Panels of a fixed grid on `[a, b]` that meet `[lo, hi]`.
fn panels_meeting(breaks: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for w in breaks.windows(2) {
        if w[1] > lo && w[0] < hi {
            if out.last() != Some(&w[0]) {
                if !out.is_empty() {
                    out.push(f64::NAN);
                }
                out.push(w[0]);
            }
            out.push(w[1]);
        }
    }
    out
}

/// Composite nodes over possibly disjoint runs of panels (runs separated by NaN).
fn composite_runs(runs: &[f64], order: usize) -> Vec<(f64, f64)> {
    runs.split(|v| v.is_nan()).flat_map(|r| composite(r, order)).collect()
}

/// `Σ w f(v)` over the product rule on `T¹F` restricted to the panels meeting
/// `support`. The grid does not depend on the support, so integrals of several
/// functions share their nodes. With `top`, heights are cut exactly there.
/// Coset pieces are pulled back to `F`.
fn integrate_region<F>(g: &LatticeGroup, spec: &QuadratureSpec, support: &Region, top: Option<f64>, k: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(UnitTangent<f64>, &mut [f64]) + Sync,
{
    let pieces = coset_pieces(g)?;
    let xs = composite_runs(&panels_meeting(&uniform_breaks(-0.5, 0.5, spec.x_panels), support.x[0], support.x[1]), spec.x_order);
    let ts = composite_runs(&panels_meeting(&uniform_breaks(0.0, TAU, spec.theta_panels), support.angle[0], support.angle[1]), spec.theta_order);
    let ceiling = top.unwrap_or(support.y[1]);
    let rows: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|&(x, wx)| {
            let mut acc = vec![0.0; k];
            let floor = (1.0 - x * x).max(0.0).sqrt();
            let mut breaks = vec![floor];
            while *breaks.last().expect("nonempty") < ceiling {
                let next = breaks.last().expect("nonempty") * spec.y_ratio;
                breaks.push(match top {
                    Some(t) if next >= t => t,
                    _ => next,
                });
            }
            let ys = composite_runs(&panels_meeting(&breaks, support.y[0], ceiling), spec.y_order);
            let mut buf = vec![0.0; k];
            for &(y, wy) in &ys {
                for &(th, wt) in &ts {
                    let v = UnitTangent::new(Point { x, y }, th);
                    for r in &pieces {
                        let jac = r.apply_point(v.base).y / y;
                        buf.iter_mut().for_each(|b| *b = 0.0);
                        f(r.apply_tangent(v), &mut buf);
                        let w = wx * wy * wt * jac * jac;
                        for (a, b) in acc.iter_mut().zip(&buf) {
                            *a += w * b;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; k];
    for r in rows {
        for (a, b) in total.iter_mut().zip(&r) {
            *a += b;
        }
    }
    Ok(total)
}

/// Angular and horizontal average of `f` at height `y` over all coset pieces.
fn slice_at<F>(g: &LatticeGroup, spec: &QuadratureSpec, y: f64, f: F) -> Result<f64>
where
    F: Fn(UnitTangent<f64>) -> f64 + Sync,
{
    let pieces = coset_pieces(g)?;
    let xs = composite(&uniform_breaks(-0.5, 0.5, spec.x_panels), spec.x_order);
    let ts = composite(&uniform_breaks(0.0, TAU, spec.theta_panels), spec.theta_order);
    let mut s = 0.0;
    for &(x, wx) in &xs {
        for &(th, wt) in &ts {
            let v = UnitTangent::new(Point { x, y }, th);
            for r in &pieces {
                let jac = r.apply_point(v.base).y / y;
                s += wx * wt * jac * jac * f(r.apply_tangent(v));
            }
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BmTotal {
    pub value: f64,
    /// Estimated absolute quadrature error.
    pub error: f64,
    /// Hyperbolic area of the fundamental domain, by the same quadrature.
    pub area: f64,
    /// `value / (2π · area)`: the factor relating `m_BM` to the Liouville measure.
    pub liouville_constant: f64,
}

fn bm_total_at(g: &LatticeGroup, dens: &PattersonDensity, spec: &QuadratureSpec, basepoint: Point<f64>, y_cut: f64) -> Result<(f64, f64)> {
    let region = Region::domain(y_cut);
    let body = integrate_region(g, spec, &region, Some(y_cut), 2, |v, out| {
        out[0] = liouville_density(dens, v, basepoint);
        out[1] = 1.0 / (v.base.y * v.base.y);
    })?;
    // above the cutoff the slice mass decays like 1/y², so the tail is y·slice(y)
    let slice = slice_at(g, spec, y_cut, |v| liouville_density(dens, v, basepoint))?;
    let area_slice = slice_at(g, spec, y_cut, |v| 1.0 / (v.base.y * v.base.y))? / TAU;
    Ok((body[0] + y_cut * slice, body[1] / TAU + y_cut * area_slice))
}

/// `‖m_BM‖` on `T¹(Γ\H²)` by quadrature, with cusp tail and an error estimate.
pub fn bm_total_mass(g: &LatticeGroup, dens: &PattersonDensity, spec: &QuadratureSpec, basepoint: Point<f64>) -> Result<BmTotal> {
    let (value, area) = bm_total_at(g, dens, spec, basepoint, spec.y_cutoff)?;
    let (far, _) = bm_total_at(g, dens, spec, basepoint, 2.0 * spec.y_cutoff)?;
    let tail_gap = (far - value).abs();
    if !value.is_finite() || tail_gap > 1e-3 * value.abs() {
        return Err(MeasureError::QuadratureDiverged(format!("cusp tail inconsistent: {value} vs {far}")));
    }
    let (coarse, _) = bm_total_at(g, dens, &spec.coarse(), basepoint, spec.y_cutoff)?;
    Ok(BmTotal { value, error: tail_gap + (coarse - value).abs(), area, liouville_constant: value / (TAU * area) })
}

/// Which side of the set the skinning measure lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Outward normals, parametrised by their forward endpoint.
    Outer,
    /// Inward normals, parametrised by their backward endpoint.
    Inner,
}

/// Density of `σ̃_D` at the endpoint `ξ`, in the chart [`Chart::choose`] picks for `ξ`.
pub fn skinning_density(d: &ConvexSet<f64>, xi: BoundaryPoint<f64>, side: Side, dens: &PattersonDensity, basepoint: Point<f64>) -> Result<f64> {
    let n = normal_from_boundary(d, xi)?;
    let foot = match side {
        Side::Outer => n.base,
        Side::Inner => flip(n).base,
    };
    let chart = Chart::choose(xi);
    Ok((-dens.delta * busemann(xi, foot, basepoint)).exp() * dens.in_chart(basepoint, chart, chart.coordinate(xi)))
}

/// `∫ s(ξ) dξ` with `ξ = m(ζ)`, evaluating in whichever chart keeps `ξ` bounded.
fn pulled_back(s: &impl Fn(BoundaryPoint<f64>) -> Result<f64>, m: &Moebius<f64>, zeta: f64) -> Result<f64> {
    let xi = m.apply_boundary(BoundaryPoint::Finite(zeta));
    match Chart::choose(xi) {
        Chart::Finite => Ok(s(xi)? / (m.c * zeta + m.d).powi(2)),
        Chart::AtInfinity => Ok(s(xi)? / (m.a * zeta + m.b).powi(2)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkinningMass {
    /// Mass of the induced measure on `T¹M`.
    pub total: f64,
    /// Mass before dividing by the stabilizer order.
    pub lifted: f64,
    pub stabilizer_order: usize,
}

/// Total mass of the skinning measure of `D` induced on `T¹(Γ\H²)`.
pub fn skinning(d: &ConvexSet<f64>, g: &LatticeGroup, side: Side, dens: &PattersonDensity, spec: &QuadratureSpec, basepoint: Point<f64>) -> Result<SkinningMass> {
    let s = |xi: BoundaryPoint<f64>| skinning_density(d, xi, side, dens, basepoint);
    let n = spec.boundary_nodes.max(8);
    match *d {
        ConvexSet::PointSet(p) | ConvexSet::Disk { center: p, .. } => {
            // ξ = tan(φ/2) around the circle, periodic trapezoid rule
            let cayley = Moebius::new(0.5f64.sqrt(), 0.5f64.sqrt(), -0.5f64.sqrt(), 0.5f64.sqrt()).expect("det 1");
            let mut lifted = 0.0;
            for k in 0..n {
                let phi = -PI + TAU * (k as f64 + 0.5) / n as f64;
                let zeta = (phi / 2.0).tan();
                // ξ = (ζ + 1)/(1 - ζ) sweeps the circle once; dζ = (1 + ζ²)/2 dφ
                lifted += pulled_back(&s, &cayley, zeta)? * 0.5 * (1.0 + zeta * zeta) * TAU / n as f64;
            }
            let order = point_stabilizer(g, p)?.len();
            Ok(SkinningMass { total: lifted / order as f64, lifted, stabilizer_order: order })
        }
        ConvexSet::Horoball { center: BoundaryPoint::Infinity, .. } => {
            let w = g.cusp_width as f64;
            let nodes = composite(&uniform_breaks(0.0, w, 8), (n / 8).max(2));
            let id = Moebius::new(1.0, 0.0, 0.0, 1.0).expect("det 1");
            let mut total = 0.0;
            for (x, wt) in nodes {
                total += wt * pulled_back(&s, &id, x)?;
            }
            Ok(SkinningMass { total, lifted: f64::INFINITY, stabilizer_order: 0 })
        }
        ConvexSet::Horoball { .. } => Err(MeasureError::UnsupportedSet("horoballs must be centered at infinity")),
        ConvexSet::GeodesicLine(xi, eta) => {
            let (_, len) = geodesic_stabilizer(g, xi, eta)?;
            let frame = crate::hyp2::frame_for(xi, eta).map_err(ConvexError::from)?;
            let nodes = composite(&uniform_breaks(0.0, len, 8), (n / 8).max(2));
            let mut total = 0.0;
            for (u, wt) in nodes {
                let e = u.exp();
                for zeta in [e, -e] {
                    total += wt * e * pulled_back(&s, &frame, zeta)?;
                }
            }
            let order = if geodesic_reversal(g, xi, eta)?.is_some() { 2 } else { 1 };
            Ok(SkinningMass { total: total / order as f64, lifted: f64::INFINITY, stabilizer_order: order })
        }
    }
}

fn bump(u: f64, lo: f64, hi: f64) -> f64 {
    let s = (2.0 * u - lo - hi) / (hi - lo);
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// Smooth step from 0 at `s ≤ 0` to 1 at `s ≥ 1`.
fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let e = |u: f64| if u <= 0.0 { 0.0 } else { (-1.0 / u).exp() };
    let (a, b) = (e(s), e(1.0 - s));
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

/// Compactly supported test functions on `T¹M`, evaluated on reduced vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Zero,
    /// Product of smooth bumps on a box inside the fundamental domain.
    Bump { x: [f64; 2], y: [f64; 2], angle: [f64; 2] },
    /// Smoothed indicator of `lo ≤ Im z ≤ hi`, ramps of width `smoothing`.
    HeightBand { lo: f64, hi: f64, smoothing: f64 },
    /// 1 below `cutoff - 1`, smoothly 0 at `cutoff`.
    Core { cutoff: f64 },
    Combination { terms: Vec<(f64, TestFunction)> },
}

impl TestFunction {
    /// Value at a vector whose base lies in the fundamental domain.
    pub fn eval_reduced(&self, v: &UnitTangent<f64>) -> f64 {
        let (x, y, a) = (v.base.x, v.base.y, v.angle);
        match self {
            TestFunction::Zero => 0.0,
            TestFunction::Bump { x: bx, y: by, angle } => {
                let fy = bump(y, by[0], by[1]);
                if fy == 0.0 {
                    return 0.0;
                }
                let fx = bump(x, bx[0], bx[1]);
                if fx == 0.0 {
                    return 0.0;
                }
                fx * fy * bump(a, angle[0], angle[1])
            }
            TestFunction::HeightBand { lo, hi, smoothing } => smooth_step((y - lo) / smoothing) * smooth_step((hi - y) / smoothing),
            TestFunction::Core { cutoff } => smooth_step(cutoff - y),
            TestFunction::Combination { terms } => terms.iter().map(|(c, f)| c * f.eval_reduced(v)).sum(),
        }
    }

    /// The value, when it is the same at every reduced vector with height in `[lo, hi]`.
    pub fn constant_on_heights(&self, lo: f64, hi: f64) -> Option<f64> {
        match self {
            TestFunction::Zero => Some(0.0),
            TestFunction::Bump { y, .. } => (hi <= y[0] || lo >= y[1]).then_some(0.0),
            TestFunction::HeightBand { lo: a, hi: b, smoothing } => {
                if hi <= *a || lo >= *b {
                    Some(0.0)
                } else if lo >= a + smoothing && hi <= b - smoothing {
                    Some(1.0)
                } else {
                    None
                }
            }
            TestFunction::Core { cutoff } => {
                if hi <= cutoff - 1.0 {
                    Some(1.0)
                } else if lo >= *cutoff {
                    Some(0.0)
                } else {
                    None
                }
            }
            TestFunction::Combination { terms } => terms.iter().map(|(c, f)| f.constant_on_heights(lo, hi).map(|v| c * v)).sum(),
        }
    }

    /// Reduce `v` into the fundamental domain, then evaluate.
    pub fn eval(&self, g: &LatticeGroup, v: UnitTangent<f64>) -> f64 {
        match reduce_vector(g, v) {
            Ok((w, _)) => self.eval_reduced(&w),
            Err(_) => 0.0,
        }
    }

    /// A box containing the support.
    pub fn support(&self) -> Region {
        match self {
            TestFunction::Zero => Region { x: [0.0, 0.0], y: [1.0, 1.0], angle: [0.0, 0.0] },
            TestFunction::Bump { x, y, angle } => Region { x: *x, y: *y, angle: *angle },
            TestFunction::HeightBand { lo, hi, .. } => Region { x: [-0.5, 0.5], y: [*lo, *hi], angle: [0.0, TAU] },
            TestFunction::Core { cutoff } => Region::domain(*cutoff),
            TestFunction::Combination { terms } => terms.iter().map(|(_, f)| f.support()).reduce(|a, b| a.union(&b)).unwrap_or(TestFunction::Zero.support()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::Zero => "zero".into(),
            TestFunction::Bump { .. } => "bump".into(),
            TestFunction::HeightBand { .. } => "height_band".into(),
            TestFunction::Core { .. } => "core".into(),
            TestFunction::Combination { .. } => "combination".into(),
        }
    }

    /// The built-in functions used by the equidistribution experiments.
    pub fn builtins() -> Vec<TestFunction> {
        vec![
            TestFunction::Bump { x: [-0.35, 0.35], y: [1.1, 2.6], angle: [0.3, 2.9] },
            TestFunction::Bump { x: [-0.45, 0.15], y: [1.3, 3.5], angle: [3.3, 6.0] },
            TestFunction::HeightBand { lo: 1.05, hi: 4.0, smoothing: 0.5 },
            TestFunction::Core { cutoff: 50.0 },
        ]
    }
}

/// Serializable record of the masses entering the counting constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureContext {
    pub group: String,
    pub density: PattersonDensity,
    pub basepoint: [f64; 2],
    pub bm_total: BmTotal,
    /// Keyed by [`set_descriptor`].
    pub skinning_totals: BTreeMap<String, f64>,
    pub quadrature: QuadratureSpec,
    pub delta: f64,
}

/// Stable textual key for a convex set.
pub fn set_descriptor(d: &ConvexSet<f64>) -> String {
    let b = |p: BoundaryPoint<f64>| match p {
        BoundaryPoint::Finite(r) => format!("{r:.17e}"),
        BoundaryPoint::Infinity => "inf".into(),
    };
    match *d {
        ConvexSet::PointSet(p) => format!("point({:.17e},{:.17e})", p.x, p.y),
        ConvexSet::Disk { center, radius } => format!("disk({:.17e},{:.17e};{radius:.17e})", center.x, center.y),
        ConvexSet::Horoball { center, size } => format!("horoball({};{size:.17e})", b(center)),
        ConvexSet::GeodesicLine(a, c) => format!("geodesic({},{})", b(a), b(c)),
    }
}

impl MeasureContext {
    pub fn build(g: &LatticeGroup, spec: QuadratureSpec, sets: &[ConvexSet<f64>]) -> Result<Self> {
        let dens = PattersonDensity::default();
        let basepoint = Point::i();
        let bm_total = bm_total_mass(g, &dens, &spec, basepoint)?;
        let mut skinning_totals = BTreeMap::new();
        for d in sets {
            let m = skinning(d, g, Side::Outer, &dens, &spec, basepoint)?;
            skinning_totals.insert(set_descriptor(d), m.total);
        }
        Ok(Self { group: g.name.clone(), density: dens, basepoint: [basepoint.x, basepoint.y], bm_total, skinning_totals, quadrature: spec, delta: dens.delta })
    }

    pub fn group(&self) -> Result<LatticeGroup> {
        LatticeGroup::by_name(&self.group).ok_or_else(|| MeasureError::Cache(format!("unknown group {}", self.group)))
    }

    pub fn skinning_total(&self, d: &ConvexSet<f64>) -> Option<f64> {
        self.skinning_totals.get(&set_descriptor(d)).copied()
    }

    /// Main-term constant `‖σ⁺_{D⁻}‖‖σ⁻_{D⁺}‖ / (δ‖m_BM‖)` of the counting asymptotic.
    pub fn counting_constant(&self, dm: &ConvexSet<f64>, dp: &ConvexSet<f64>) -> Option<f64> {
        Some(self.skinning_total(dm)? * self.skinning_total(dp)? / (self.delta * self.bm_total.value))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| MeasureError::Cache(e.to_string()))
    }

    /// Whether a cached context answers a request for the given group, quadrature and sets.
    pub fn covers(&self, g: &LatticeGroup, spec: &QuadratureSpec, sets: &[ConvexSet<f64>]) -> bool {
        self.group == g.name && self.quadrature == *spec && sets.iter().all(|d| self.skinning_total(d).is_some())
    }
}

/// `m_BM(ψ)` on `T¹M`.
pub fn bm_integrate(psi: &TestFunction, ctx: &MeasureContext) -> Result<f64> {
    Ok(bm_integrate_many(std::slice::from_ref(psi), ctx)?[0])
}

/// `m_BM(ψ_k)` for several functions in one pass.
pub fn bm_integrate_many(psis: &[TestFunction], ctx: &MeasureContext) -> Result<Vec<f64>> {
    let g = ctx.group()?;
    let spec = ctx.quadrature;
    let basepoint = Point { x: ctx.basepoint[0], y: ctx.basepoint[1] };
    let region = psis.iter().map(|p| p.support()).reduce(|a, b| a.union(&b)).unwrap_or(TestFunction::Zero.support());
    if !region.y[1].is_finite() {
        return Err(MeasureError::QuadratureDiverged("unbounded support".into()));
    }
    let dens = ctx.density;
    integrate_region(&g, &spec, &region, None, psis.len(), |v, out| {
        let vals: Vec<f64> = psis.iter().map(|p| p.eval(&g, v)).collect();
        if vals.iter().all(|&x| x == 0.0) {
            return;
        }
        let rho = liouville_density(&dens, v, basepoint);
        for (o, x) in out.iter_mut().zip(vals) {
            *o = x * rho;
        }
    })
}
