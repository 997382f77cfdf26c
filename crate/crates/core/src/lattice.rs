//! Arithmetic lattices: exact ball enumeration, translates of convex sets,
//! the perpendicular census and fundamental-domain reduction.
//!
//! Group elements are [`MoebiusInt`]s. For a basepoint `z = x + iy` with
//! rational `x` and `y²`,
//!
//! ```text
//! 2 cosh d(z, γz) = (a - xc)² + (ax + b - cx² - dx)²/y² + c²y² + (cx + d)²
//! ```
//!
//! is a rational quadratic form in the entries, so ball membership is decided
//! in integer arithmetic.

use crate::convex::{common_perp, set_dist, CommonPerp, ConvexError, ConvexSet};
use crate::hyp2::{dist, BoundaryPoint, GeometryError, Moebius, MoebiusInt, Point, Transform, UnitTangent};
use crate::real::TOL;
use num_integer::Integer;
use num_rational::Ratio;
use rayon::prelude::*;
use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use thiserror::Error;

pub const DEFAULT_ELEMENT_CAP: usize = 50_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("exact arithmetic bound exceeded")]
    Overflow,
    #[error("element cap of {0} exceeded")]
    BudgetExceeded(usize),
    #[error("no fundamental-domain reduction configured for group {0}")]
    NoReductionRule(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(&'static str),
    #[error("negative radius {0}")]
    NegativeRadius(f64),
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

impl From<GeometryError> for LatticeError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::Overflow => LatticeError::Overflow,
            other => LatticeError::Convex(ConvexError::Geometry(other)),
        }
    }
}

type Result<T> = std::result::Result<T, LatticeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Modular,
    /// Through the modular domain and the six cosets of level 2.
    Level2,
}

#[derive(Clone)]
pub struct LatticeGroup {
    pub name: String,
    pub generators: Vec<MoebiusInt>,
    pub membership_test: fn(&MoebiusInt) -> bool,
    pub reduction: Option<Reduction>,
    /// Width of the cusp at infinity: `T^w` generates the parabolic stabilizer.
    pub cusp_width: i64,
    /// Exact critical exponent, when known.
    pub delta: Option<f64>,
    pub covolume_hint: Option<f64>,
    pub element_cap: usize,
}

impl fmt::Debug for LatticeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatticeGroup").field("name", &self.name).field("generators", &self.generators).finish()
    }
}

fn in_psl2z(_: &MoebiusInt) -> bool {
    true
}

fn in_gamma2(m: &MoebiusInt) -> bool {
    m.a.rem_euclid(2) == 1 && m.d.rem_euclid(2) == 1 && m.b.rem_euclid(2) == 0 && m.c.rem_euclid(2) == 0
}

impl LatticeGroup {
    pub fn psl2z() -> Self {
        Self {
            name: "PSL2Z".into(),
            generators: vec![MoebiusInt::S, MoebiusInt::T],
            membership_test: in_psl2z,
            reduction: Some(Reduction::Modular),
            cusp_width: 1,
            delta: Some(1.0),
            covolume_hint: Some(std::f64::consts::PI / 3.0),
            element_cap: DEFAULT_ELEMENT_CAP,
        }
    }

    pub fn gamma2() -> Self {
        Self {
            name: "GAMMA2".into(),
            generators: vec![MoebiusInt::t_power(2), MoebiusInt::new(1, 0, 2, 1).expect("det 1")],
            membership_test: in_gamma2,
            reduction: Some(Reduction::Level2),
            cusp_width: 2,
            delta: Some(1.0),
            covolume_hint: Some(2.0 * std::f64::consts::PI),
            element_cap: DEFAULT_ELEMENT_CAP,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "PSL2Z" => Some(Self::psl2z()),
            "GAMMA2" => Some(Self::gamma2()),
            _ => None,
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.element_cap = cap;
        self
    }

    pub fn contains(&self, m: &MoebiusInt) -> bool {
        (self.membership_test)(m)
    }
}

/// Exact form of `2 cosh d(z, γz)` for `z = p/q + i·sqrt(r/s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BallForm {
    p: i128,
    q: i128,
    r: i128,
    s: i128,
}

fn rational(v: f64, max_den: i64) -> Option<(i64, i64)> {
    if !v.is_finite() {
        return None;
    }
    // continued-fraction convergents until one reproduces v exactly
    let (mut h0, mut h1, mut k0, mut k1) = (0i64, 1i64, 1i64, 0i64);
    let mut x = v;
    for _ in 0..64 {
        let a = x.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let a = a as i64;
        let h2 = a.checked_mul(h1)?.checked_add(h0)?;
        let k2 = a.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            return None;
        }
        if h2 as f64 / k2 as f64 == v {
            return Some((h2, k2));
        }
        let frac = x - a as f64;
        if frac == 0.0 {
            return None;
        }
        x = frac.recip();
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
    }
    None
}

impl BallForm {
    /// The exact form at `z` if `Re z` and `(Im z)²` are rationals with small denominators.
    pub fn exact(z: Point<f64>) -> Option<Self> {
        let (p, q) = rational(z.x, 1 << 10)?;
        let (r, s) = rational(z.y * z.y, 1 << 10)?;
        if p.unsigned_abs() > 1 << 20 || r.unsigned_abs() > 1 << 20 {
            return None;
        }
        Some(Self { p: p as i128, q: q as i128, r: r as i128, s: s as i128 })
    }

    /// A nearby point carrying an exact form.
    fn nearby(z: Point<f64>) -> (Self, Point<f64>) {
        let sx = (z.x * 1024.0).round();
        let sy2 = (z.y * z.y * 1024.0).round().max(1.0);
        let form = Self { p: sx as i128, q: 1024, r: sy2 as i128, s: 1024 }.reduced();
        let w = Point { x: sx / 1024.0, y: (sy2 / 1024.0).sqrt() };
        (form, w)
    }

    fn reduced(self) -> Self {
        let g1 = self.p.gcd(&self.q);
        let g2 = self.r.gcd(&self.s);
        Self { p: self.p / g1, q: self.q / g1, r: self.r / g2, s: self.s / g2 }
    }

    pub fn point(&self) -> Point<f64> {
        Point { x: self.p as f64 / self.q as f64, y: (self.r as f64 / self.s as f64).sqrt() }
    }

    fn scale(&self) -> Option<i128> {
        self.q.checked_pow(4)?.checked_mul(self.r)?.checked_mul(self.s)
    }

    /// `K · 2cosh d(z, γz)` as an integer, `K = q⁴rs`.
    fn value(&self, m: &MoebiusInt) -> Option<i128> {
        let (a, b, c, d) = (m.a as i128, m.b as i128, m.c as i128, m.d as i128);
        let (p, q, r, s) = (self.p, self.q, self.r, self.s);
        let sq = |v: i128| v.checked_mul(v);
        let qqrs = q.checked_mul(q)?.checked_mul(r)?.checked_mul(s)?;
        let t1 = sq(a.checked_mul(q)?.checked_sub(p.checked_mul(c)?)?)?.checked_mul(qqrs)?;
        let inner = a
            .checked_mul(p)?
            .checked_mul(q)?
            .checked_add(b.checked_mul(q)?.checked_mul(q)?)?
            .checked_sub(c.checked_mul(p)?.checked_mul(p)?)?
            .checked_sub(d.checked_mul(p)?.checked_mul(q)?)?;
        let t2 = sq(inner)?.checked_mul(s.checked_mul(s)?)?;
        let t3 = sq(c)?.checked_mul(sq(r)?)?.checked_mul(q.checked_pow(4)?)?;
        let t4 = sq(c.checked_mul(p)?.checked_add(d.checked_mul(q)?)?)?.checked_mul(qqrs)?;
        t1.checked_add(t2)?.checked_add(t3)?.checked_add(t4)
    }

    /// Largest admissible integer value for radius `t`.
    fn threshold(&self, t: f64) -> Result<i128> {
        let k = self.scale().ok_or(LatticeError::Overflow)? as f64;
        let v = (2.0 * t.cosh() * k).floor();
        if !(v < 1e36) {
            return Err(LatticeError::Overflow);
        }
        Ok(v as i128)
    }

    /// Exact displacement `d(z, γz)`.
    pub fn displacement(&self, m: &MoebiusInt) -> f64 {
        match (self.value(m), self.scale()) {
            (Some(v), Some(k)) => {
                let ratio = Ratio::new(v, 2 * k);
                let c = *ratio.numer() as f64 / *ratio.denom() as f64;
                c.max(1.0).acosh()
            }
            _ => {
                let z = self.point();
                dist(z, m.to_real::<f64>().apply_point(z))
            }
        }
    }

    fn within(&self, m: &MoebiusInt, threshold: i128) -> bool {
        self.value(m).map(|v| v <= threshold).unwrap_or(false)
    }
}

/// Scan all canonical `γ` with `K·2cosh d(z, γz) ≤ threshold`.
fn scan(g: &LatticeGroup, form: &BallForm, t: f64) -> Result<Vec<MoebiusInt>> {
    let threshold = form.threshold(t)?;
    let z = form.point();
    let w = (2.0 * t.cosh()).sqrt();
    let cmax = (w / z.y).floor() as i64 + 1;
    let reach = w * (1.0 + z.x.abs()) * z.y.max(z.y.recip()) + (cmax as f64) * (1.0 + z.x * z.x);
    if reach > (1u64 << 30) as f64 {
        return Err(LatticeError::Overflow);
    }
    let cap = g.element_cap;
    // the ball holds about π eᵗ / area(Γ\H) elements; refuse hopeless scans up front
    if let Some(area) = g.covolume_hint {
        if std::f64::consts::PI * t.exp() / area > 1.05 * cap as f64 {
            return Err(LatticeError::BudgetExceeded(cap));
        }
    }
    let found = AtomicUsize::new(0);
    let push = |out: &mut Vec<MoebiusInt>, m: MoebiusInt| -> Result<()> {
        if m.is_canonical() && g.contains(&m) && form.within(&m, threshold) {
            out.push(m);
            if found.fetch_add(1, AtomicOrdering::Relaxed) + 1 > cap {
                return Err(LatticeError::BudgetExceeded(cap));
            }
        }
        Ok(())
    };
    let rows: Vec<Result<Vec<MoebiusInt>>> = (-cmax..=cmax)
        .into_par_iter()
        .map(|c| {
            let mut out = Vec::new();
            if c == 0 {
                let bmax = (z.y * w).floor() as i64 + 1;
                for b in -bmax..=bmax {
                    push(&mut out, MoebiusInt { a: 1, b, c: 0, d: 1 })?;
                }
                return Ok(out);
            }
            let cabs = c.abs();
            let cx = c as f64 * z.x;
            let (dlo, dhi) = ((-cx - w).floor() as i64 - 1, (-cx + w).ceil() as i64 + 1);
            let (alo, ahi) = ((cx - w).floor() as i64 - 1, (cx + w).ceil() as i64 + 1);
            for d in dlo..=dhi {
                let e = d.rem_euclid(cabs).extended_gcd(&cabs);
                if e.gcd != 1 {
                    continue;
                }
                // a ≡ d⁻¹ (mod |c|)
                let inv = e.x.rem_euclid(cabs);
                let mut a = alo + (inv - alo).rem_euclid(cabs);
                while a <= ahi {
                    let num = a as i128 * d as i128 - 1;
                    let b = (num / c as i128) as i64;
                    push(&mut out, MoebiusInt { a, b, c, d })?;
                    a += cabs;
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    all.sort_unstable();
    all.dedup();
    Ok(all)
}

/// All `γ ∈ G` (modulo `±1`) with `d(x0, γx0) ≤ t`, in canonical order.
pub fn enumerate_ball(g: &LatticeGroup, x0: Point<f64>, t: f64) -> Result<Vec<MoebiusInt>> {
    if t < 0.0 {
        return Err(LatticeError::NegativeRadius(t));
    }
    if let Some(form) = BallForm::exact(x0) {
        return scan(g, &form, t);
    }
    // scan around a nearby exact point, then filter
    let (form, w) = BallForm::nearby(x0);
    let slack = 2.0 * dist(x0, w) + 1e-9;
    let mut out = scan(g, &form, t + slack)?;
    out.retain(|m| dist(x0, m.to_real::<f64>().apply_point(x0)) <= t);
    Ok(out)
}

/// Breadth-first search over generator words, used to cross-check [`enumerate_ball`].
pub fn bfs_ball(g: &LatticeGroup, x0: Point<f64>, t: f64) -> Result<Vec<MoebiusInt>> {
    if t < 0.0 {
        return Err(LatticeError::NegativeRadius(t));
    }
    let displacement = |m: &MoebiusInt| dist(x0, m.to_real::<f64>().apply_point(x0));
    let mut gens: Vec<MoebiusInt> = g.generators.iter().flat_map(|m| [*m, m.inverse()]).collect();
    gens.sort_unstable();
    gens.dedup();
    let reach = gens.iter().map(displacement).fold(0.0, f64::max);
    let prune = t + 2.0 * reach + 1e-9;
    let exact = BallForm::exact(x0);
    let inside = |m: &MoebiusInt| match &exact {
        Some(form) => form.threshold(t).map(|th| form.within(m, th)).unwrap_or(false),
        None => displacement(m) <= t,
    };
    let mut seen = BTreeSet::from([MoebiusInt::IDENTITY]);
    let mut frontier = vec![MoebiusInt::IDENTITY];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for m in &frontier {
            for s in &gens {
                let n = m.compose(s)?;
                if !seen.contains(&n) && displacement(&n) <= prune {
                    seen.insert(n);
                    next.push(n);
                    if seen.len() > g.element_cap {
                        return Err(LatticeError::BudgetExceeded(g.element_cap));
                    }
                }
            }
        }
        frontier = next;
    }
    Ok(seen.into_iter().filter(inside).collect())
}

/// Elements fixing `z`.
pub fn point_stabilizer(g: &LatticeGroup, z: Point<f64>) -> Result<Vec<MoebiusInt>> {
    let eps = 1e-7;
    let mut out = enumerate_ball(g, z, eps)?;
    out.retain(|m| dist(z, m.to_real::<f64>().apply_point(z)) <= eps);
    Ok(out)
}

/// Geometric sort key used for dedup; the first coordinate drives the sweep.
fn set_key(s: &ConvexSet<f64>) -> [f64; 4] {
    let bval = |b: BoundaryPoint<f64>| b.finite().unwrap_or(f64::INFINITY);
    match *s {
        ConvexSet::PointSet(p) => [p.x, p.y, 0.0, 0.0],
        ConvexSet::Disk { center, radius } => [center.x, center.y, radius, 0.0],
        ConvexSet::Horoball { center, size } => [bval(center), size, 0.0, 0.0],
        ConvexSet::GeodesicLine(a, b) => {
            let (u, v) = (bval(a), bval(b));
            [u.min(v), u.max(v), 0.0, 0.0]
        }
    }
}

fn key_cmp(a: &[f64; 4], b: &[f64; 4]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

const DEDUP_TOL: f64 = 1e-9;

/// Family `{γD}` indexed by `Γ/Γ_D`, one entry per distinct image set.
#[derive(Debug, Clone)]
pub struct TranslateFamily {
    pub base_set: ConvexSet<f64>,
    pub reps: Vec<(MoebiusInt, ConvexSet<f64>)>,
}

impl TranslateFamily {
    /// Merge geometrically identical images, keeping the least representative.
    /// The result is sorted by representative.
    pub fn dedup(&mut self) {
        let mut items = std::mem::take(&mut self.reps);
        items.sort_by(|x, y| key_cmp(&set_key(&x.1), &set_key(&y.1)).then(x.0.cmp(&y.0)));
        let keys: Vec<[f64; 4]> = items.iter().map(|x| set_key(&x.1)).collect();
        let mut owner: Vec<usize> = (0..items.len()).collect();
        for i in 0..items.len() {
            if owner[i] != i {
                continue;
            }
            let mut j = i + 1;
            while j < items.len() && sweep_close(keys[j][0], keys[i][0]) {
                if owner[j] == j && items[i].1.approx_eq(&items[j].1, DEDUP_TOL) {
                    owner[j] = i;
                    if items[j].0 < items[i].0 {
                        items[i].0 = items[j].0;
                    }
                }
                j += 1;
            }
        }
        let mut kept: Vec<_> = items.into_iter().enumerate().filter(|(k, _)| owner[*k] == *k).map(|(_, v)| v).collect();
        kept.sort_by_key(|x| x.0);
        self.reps = kept;
    }

    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }
}

fn sweep_close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= DEDUP_TOL * (1.0 + b.abs())
}

/// Translates `γD` with `d(x0, γD) ≤ radius`.
fn translates_within(g: &LatticeGroup, base: &ConvexSet<f64>, x0: Point<f64>, radius: f64) -> Result<TranslateFamily> {
    let reps;
    match *base {
        ConvexSet::PointSet(q) | ConvexSet::Disk { center: q, .. } => {
            let r = if let ConvexSet::Disk { radius, .. } = base { *radius } else { 0.0 };
            let ball = enumerate_ball(g, x0, radius + r + dist(x0, q) + 1e-9)?;
            reps = ball
                .into_par_iter()
                .filter_map(|m| {
                    let img = base.transform(&m.to_real());
                    (set_dist(&ConvexSet::PointSet(x0), &img) <= radius).then_some((m, img))
                })
                .collect();
        }
        ConvexSet::Horoball { center: BoundaryPoint::Infinity, size: h } => {
            reps = cusp_translates(g, h, x0, radius)?;
        }
        ConvexSet::Horoball { .. } => return Err(LatticeError::Unsupported("horoballs must be centered at infinity")),
        ConvexSet::GeodesicLine(xi, eta) => {
            let (_, len) = geodesic_stabilizer(g, xi, eta)?;
            let foot = crate::hyp2::closest_point_on_geodesic(xi, eta, x0)?;
            let ball = enumerate_ball(g, x0, radius + len + dist(x0, foot) + 1e-9)?;
            reps = ball
                .into_par_iter()
                .filter_map(|m| {
                    let img = base.transform(&m.to_real());
                    (set_dist(&ConvexSet::PointSet(x0), &img) <= radius).then_some((m, img))
                })
                .collect();
        }
    }
    let mut fam = TranslateFamily { base_set: *base, reps };
    fam.dedup();
    Ok(fam)
}

/// Representative of the coset with first column `(a, c)`, `c > 0`.
fn complete_column(g: &LatticeGroup, a: i64, c: i64) -> MoebiusInt {
    let e = a.extended_gcd(&c);
    // a·x + c·y = 1, so [a, -y; c, x] has determinant one
    let (mut b, mut d) = (-e.y, e.x);
    let k = d.div_euclid(c);
    b -= k * a;
    d -= k * c;
    if !g.contains(&MoebiusInt { a, b, c, d }) {
        b += a;
        d += c;
    }
    MoebiusInt::from_unchecked(a, b, c, d)
}

/// Translates of `{y ≥ h}` within `radius` of `x0`: tangent at `a/c`, diameter `1/(hc²)`.
fn cusp_translates(g: &LatticeGroup, h: f64, x0: Point<f64>, radius: f64) -> Result<Vec<(MoebiusInt, ConvexSet<f64>)>> {
    let bound = x0.y * radius.exp() / h;
    let cmax = (bound / (x0.y * x0.y)).sqrt().floor() as i64 + 1;
    if cmax as f64 * (1.0 + x0.x.abs() + bound.sqrt()) > (1u64 << 30) as f64 {
        return Err(LatticeError::Overflow);
    }
    let cap = g.element_cap;
    let found = AtomicUsize::new(0);
    let rows: Vec<Result<Vec<(MoebiusInt, ConvexSet<f64>)>>> = (0..=cmax)
        .into_par_iter()
        .map(|c| {
            let mut out = Vec::new();
            if c == 0 {
                let hb = ConvexSet::Horoball { center: BoundaryPoint::Infinity, size: h };
                if set_dist(&ConvexSet::PointSet(x0), &hb) <= radius {
                    out.push((MoebiusInt::IDENTITY, hb));
                }
                return Ok(out);
            }
            let cx = c as f64 * x0.x;
            let reach = (bound - (c as f64 * x0.y).powi(2)).max(0.0).sqrt();
            for a in (cx - reach).floor() as i64 - 1..=(cx + reach).ceil() as i64 + 1 {
                if a.gcd(&c) != 1 {
                    continue;
                }
                let m = complete_column(g, a, c);
                if !g.contains(&m) {
                    continue;
                }
                let hb = cusp_image(a, c, h);
                if set_dist(&ConvexSet::PointSet(x0), &hb) <= radius {
                    out.push((m, hb));
                    if found.fetch_add(1, AtomicOrdering::Relaxed) + 1 > cap {
                        return Err(LatticeError::BudgetExceeded(cap));
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    Ok(all)
}

fn cusp_image(a: i64, c: i64, h: f64) -> ConvexSet<f64> {
    let cf = c as f64;
    ConvexSet::Horoball { center: BoundaryPoint::Finite(a as f64 / cf), size: 1.0 / (h * cf * cf) }
}

/// Primitive element translating along `]ξ, η[` towards `η`, with its translation length.
pub fn geodesic_stabilizer(g: &LatticeGroup, xi: BoundaryPoint<f64>, eta: BoundaryPoint<f64>) -> Result<(MoebiusInt, f64)> {
    let foot = crate::hyp2::closest_point_on_geodesic(xi, eta, Point::i())?;
    let tol = 1e-9;
    let mut radius = 4.0;
    while radius <= 24.0 {
        let mut best: Option<(MoebiusInt, f64)> = None;
        for m in enumerate_ball(g, foot, radius)? {
            let tr = (m.a + m.d).unsigned_abs();
            if tr <= 2 {
                continue;
            }
            let real = m.to_real::<f64>();
            if real.apply_boundary(xi).approx_eq(&xi, tol) && real.apply_boundary(eta).approx_eq(&eta, tol) {
                let len = 2.0 * (tr as f64 / 2.0).acosh();
                if best.map(|(_, l)| len < l - tol).unwrap_or(true) {
                    // orient towards η
                    let frame = crate::hyp2::frame_for(xi, eta)?;
                    let s = frame.inverse().apply_point(real.apply_point(frame.apply_point(Point::i()))).y;
                    best = Some((if s > 1.0 { m } else { m.inverse() }, len));
                }
            }
        }
        if let Some(b) = best {
            return Ok(b);
        }
        radius += 4.0;
    }
    Err(LatticeError::Unsupported("geodesic is not closed in this group"))
}

/// An element of `G` exchanging `ξ` and `η`, if any: a half-turn about a point
/// of the closed geodesic `]ξ, η[`.
pub fn geodesic_reversal(g: &LatticeGroup, xi: BoundaryPoint<f64>, eta: BoundaryPoint<f64>) -> Result<Option<MoebiusInt>> {
    let (_, len) = geodesic_stabilizer(g, xi, eta)?;
    let foot = crate::hyp2::closest_point_on_geodesic(xi, eta, Point::i())?;
    let tol = 1e-9;
    // composing with the translation moves the centre to within `len / 2` of `foot`
    Ok(enumerate_ball(g, foot, len + tol)?.into_iter().find(|m| {
        let real = m.to_real::<f64>();
        real.apply_boundary(xi).approx_eq(&eta, tol) && real.apply_boundary(eta).approx_eq(&xi, tol)
    }))
}

/// `D` and the elements of `G` mapping `D` to itself, enumerated at `x0`.
pub fn enumerate_translates(g: &LatticeGroup, d: &ConvexSet<f64>, x0: Point<f64>, t: f64) -> Result<TranslateFamily> {
    if t < 0.0 {
        return Err(LatticeError::NegativeRadius(t));
    }
    translates_within(g, d, x0, t)
}

/// One common perpendicular of the census.
#[derive(Debug, Clone, PartialEq)]
pub struct PerpRecord {
    pub perp: CommonPerp<f64>,
    pub rep_minus: MoebiusInt,
    pub rep_plus: MoebiusInt,
    pub multiplicity: Ratio<i64>,
    pub weight: f64,
}

impl PerpRecord {
    fn new(perp: CommonPerp<f64>, rep_plus: MoebiusInt) -> Self {
        Self { perp, rep_minus: MoebiusInt::IDENTITY, rep_plus, multiplicity: Ratio::from_integer(1), weight: 1.0 }
    }

    pub fn length(&self) -> f64 {
        self.perp.length
    }
}

/// The cyclic part of the stabilizer of a non-compact set, with a coordinate
/// along its boundary whose fundamental interval is `[0, period)`.
struct CyclicStab {
    generator: MoebiusInt,
    period: f64,
    frame: Moebius<f64>,
    kind: CyclicKind,
    /// The full stabilizer also reverses the set.
    reversible: bool,
}

enum CyclicKind {
    Horo,
    Axis,
}

impl CyclicStab {
    fn of(g: &LatticeGroup, set: &ConvexSet<f64>) -> Result<Self> {
        match *set {
            ConvexSet::Horoball { center: BoundaryPoint::Infinity, .. } => Ok(Self {
                generator: MoebiusInt::t_power(g.cusp_width),
                period: g.cusp_width as f64,
                frame: Moebius::identity(),
                kind: CyclicKind::Horo,
                reversible: false,
            }),
            ConvexSet::GeodesicLine(xi, eta) => {
                let (generator, period) = geodesic_stabilizer(g, xi, eta)?;
                let reversible = geodesic_reversal(g, xi, eta)?.is_some();
                Ok(Self { generator, period, frame: crate::hyp2::frame_for(xi, eta)?, kind: CyclicKind::Axis, reversible })
            }
            _ => Err(LatticeError::Unsupported("set has no cyclic stabilizer")),
        }
    }

    fn coordinate(&self, p: Point<f64>) -> f64 {
        match self.kind {
            CyclicKind::Horo => p.x,
            CyclicKind::Axis => self.frame.inverse().apply_point(p).y.ln(),
        }
    }

    /// Distance from the reference point to the far end of the fundamental interval.
    fn spread(&self, reference: Point<f64>) -> f64 {
        let far = match self.kind {
            CyclicKind::Horo => Point { x: self.period, y: reference.y },
            CyclicKind::Axis => self.frame.apply_point(Point::on_axis(self.period.exp())),
        };
        dist(reference, far)
    }

    fn reference(&self, set: &ConvexSet<f64>) -> Point<f64> {
        match (*set, &self.kind) {
            (ConvexSet::Horoball { size, .. }, CyclicKind::Horo) => Point::on_axis(size),
            _ => self.frame.apply_point(Point::i()),
        }
    }

    fn power(&self, k: i64) -> Result<MoebiusInt> {
        let base = if k < 0 { self.generator.inverse() } else { self.generator };
        let mut out = MoebiusInt::IDENTITY;
        for _ in 0..k.unsigned_abs() {
            out = out.compose(&base)?;
        }
        Ok(out)
    }
}

fn perp_or_skip(dm: &ConvexSet<f64>, img: &ConvexSet<f64>, t: f64) -> Option<CommonPerp<f64>> {
    let d = set_dist(dm, img);
    if d <= TOL.sets_too_close || d > t {
        return None;
    }
    common_perp(dm, img).ok()
}

fn census_sort(mut out: Vec<PerpRecord>) -> Vec<PerpRecord> {
    out.sort_by(|x, y| x.rep_plus.cmp(&y.rep_plus).then(x.perp.length.total_cmp(&y.perp.length)));
    out
}

/// The common perpendiculars from `D⁻` to the translates of `D⁺` of length in
/// `(0, t]`, modulo the stabilizer of `D⁻`, in canonical order.
pub fn perp_census(g: &LatticeGroup, dm: &ConvexSet<f64>, dp: &ConvexSet<f64>, t: f64) -> Result<Vec<PerpRecord>> {
    if !(t > 0.0) {
        return Err(LatticeError::NegativeRadius(t));
    }
    let compact = |s: &ConvexSet<f64>| matches!(s, ConvexSet::PointSet(_) | ConvexSet::Disk { .. });
    let out = match (*dm, *dp) {
        (
            ConvexSet::Horoball { center: BoundaryPoint::Infinity, size: h1 },
            ConvexSet::Horoball { center: BoundaryPoint::Infinity, size: h2 },
        ) => cusp_census(g, h1, h2, t)?,
        _ if compact(dm) => compact_census(g, dm, dp, t)?,
        _ if compact(dp) => {
            let stab = CyclicStab::of(g, dm)?;
            let mut out = Vec::new();
            for rec in compact_census(g, dp, dm, t)? {
                let back = rec.rep_plus.inverse();
                let perp = rec.perp.reversed().transform(&back.to_real());
                let img = dp.transform(&back.to_real());
                out.push((back, img, perp, rec.multiplicity));
            }
            normalize_cyclic(&stab, out)?
        }
        _ => {
            let stab = CyclicStab::of(g, dm)?;
            let reference = stab.reference(dm);
            let fam = translates_within(g, dp, reference, t + stab.spread(reference) + 1e-9)?;
            // modulo the cyclic part only, a reversal of D⁻ lists each class twice
            let class_mult = Ratio::new(1, if stab.reversible { 2 } else { 1 });
            let items = fam
                .reps
                .into_par_iter()
                .filter_map(|(m, img)| perp_or_skip(dm, &img, t).map(|p| (m, img, p, class_mult)))
                .collect();
            normalize_cyclic(&stab, items)?
        }
    };
    Ok(census_sort(out))
}

/// Move each foot into the fundamental interval and merge duplicates.
fn normalize_cyclic(stab: &CyclicStab, items: Vec<(MoebiusInt, ConvexSet<f64>, CommonPerp<f64>, Ratio<i64>)>) -> Result<Vec<PerpRecord>> {
    let mut shifted = Vec::with_capacity(items.len());
    for (m, img, perp, mult) in items {
        // feet within rounding of the far end belong at the near one
        let k = (stab.coordinate(perp.u.base) / stab.period + 1e-9).floor() as i64;
        let shift = stab.power(-k)?;
        let real = shift.to_real::<f64>();
        shifted.push((shift.compose(&m)?, img.transform(&real), perp.transform(&real), mult));
    }
    let mut fam = TranslateFamily { base_set: shifted.first().map(|x| x.1).unwrap_or(ConvexSet::PointSet(Point::i())), reps: Vec::new() };
    fam.reps = shifted.iter().map(|x| (x.0, x.1)).collect();
    fam.dedup();
    // translates related by the cyclic part shift to the same representative; keep one
    let mut keep: BTreeSet<MoebiusInt> = fam.reps.iter().map(|x| x.0).collect();
    Ok(shifted
        .into_iter()
        .filter(|x| keep.remove(&x.0))
        .map(|(m, _, p, multiplicity)| PerpRecord { multiplicity, ..PerpRecord::new(p, m) })
        .collect())
}

fn compact_census(g: &LatticeGroup, dm: &ConvexSet<f64>, dp: &ConvexSet<f64>, t: f64) -> Result<Vec<PerpRecord>> {
    let (q, r) = match *dm {
        ConvexSet::PointSet(q) => (q, 0.0),
        ConvexSet::Disk { center, radius } => (center, radius),
        _ => unreachable!("compact set expected"),
    };
    let fam = translates_within(g, dp, q, t + r)?;
    let items: Vec<(MoebiusInt, ConvexSet<f64>, CommonPerp<f64>)> = fam
        .reps
        .into_par_iter()
        .filter_map(|(m, img)| perp_or_skip(dm, &img, t).map(|p| (m, img, p)))
        .collect();
    let stab: Vec<MoebiusInt> = point_stabilizer(g, q)?.into_iter().filter(|s| *s != MoebiusInt::IDENTITY).collect();
    if stab.is_empty() {
        return Ok(items.into_iter().map(|(m, _, p)| PerpRecord::new(p, m)).collect());
    }
    // finite stabilizer: keep the orbit member with the least key
    let mut out = Vec::new();
    for (m, img, p) in items {
        let key = set_key(&img);
        let mut fixed = 1;
        let mut least = true;
        for s in &stab {
            let other = img.transform(&s.to_real());
            if other.approx_eq(&img, DEDUP_TOL) {
                fixed += 1;
            } else if key_cmp(&set_key(&other), &key) == Ordering::Less {
                least = false;
            }
        }
        if least {
            let mut rec = PerpRecord::new(p, m);
            rec.multiplicity = Ratio::new(1, fixed);
            out.push(rec);
        }
    }
    Ok(out)
}

/// Perpendiculars between `{y ≥ h1}` and the translates of `{y ≥ h2}`.
/// A translate with bottom-left entry `c` lies at distance `2 ln c + ln h1 + ln h2`.
fn cusp_census(g: &LatticeGroup, h1: f64, h2: f64, t: f64) -> Result<Vec<PerpRecord>> {
    let offset = h1.ln() + h2.ln();
    let cmax = ((t - offset) / 2.0).exp().floor() as i64 + 1;
    if cmax > 1 << 30 {
        return Err(LatticeError::Overflow);
    }
    let width = g.cusp_width;
    let cap = g.element_cap;
    // Σ_{c ≤ C} w·φ(c) ≈ 3wC²/π²
    if 3.0 * (width as f64) * (cmax as f64).powi(2) / (std::f64::consts::PI).powi(2) > 1.05 * cap as f64 {
        return Err(LatticeError::BudgetExceeded(cap));
    }
    let found = AtomicUsize::new(0);
    let rows: Vec<Result<Vec<PerpRecord>>> = (2..=cmax)
        .into_par_iter()
        .map(|c| {
            let length = 2.0 * (c as f64).ln() + offset;
            let mut out = Vec::new();
            if length > t || length <= TOL.sets_too_close {
                return Ok(out);
            }
            for a in 0..width * c {
                if a.gcd(&c) != 1 {
                    continue;
                }
                let m = complete_column(g, a, c);
                if !g.contains(&m) {
                    continue;
                }
                let u = UnitTangent::downward(Point { x: a as f64 / c as f64, y: h1 });
                let v = UnitTangent::downward(Point { x: u.base.x, y: 1.0 / (h2 * (c * c) as f64) });
                out.push(PerpRecord::new(CommonPerp { u, v, length }, m));
                if found.fetch_add(1, AtomicOrdering::Relaxed) + 1 > cap {
                    return Err(LatticeError::BudgetExceeded(cap));
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    Ok(all)
}

/// Returns `(z', γ)` with `z = γ·z'` and `z'` in the closed fundamental domain.
pub fn reduce_fd(g: &LatticeGroup, z: Point<f64>) -> Result<(Point<f64>, MoebiusInt)> {
    match g.reduction {
        Some(Reduction::Modular) => modular_reduce(z),
        Some(Reduction::Level2) => {
            let (w, gamma) = modular_reduce(z)?;
            let rep = level2_coset(&gamma);
            // γ = (γ r⁻¹)·r with γ r⁻¹ ∈ Γ(2)
            let inner = gamma.compose(&rep.inverse())?;
            Ok((rep.to_real::<f64>().apply_point(w), inner))
        }
        None => Err(LatticeError::NoReductionRule(g.name.clone())),
    }
}

/// `(v', γ)` with `v = γ·v'` and the base of `v'` reduced.
pub fn reduce_vector(g: &LatticeGroup, v: UnitTangent<f64>) -> Result<(UnitTangent<f64>, MoebiusInt)> {
    let (_, gamma) = reduce_fd(g, v.base)?;
    let w = gamma.inverse().to_real::<f64>().apply_tangent(v);
    Ok((w, gamma))
}

const REDUCTION_STEPS: usize = 10_000;

/// Reduction into the modular domain `|Re z| ≤ 1/2, |z| ≥ 1`.
pub fn modular_reduce(z: Point<f64>) -> Result<(Point<f64>, MoebiusInt)> {
    let mut w = z;
    let mut gamma = MoebiusInt::IDENTITY;
    for _ in 0..REDUCTION_STEPS {
        let n = (w.x + 0.5).floor();
        if n != 0.0 {
            if n.abs() > 1e9 {
                return Err(LatticeError::Overflow);
            }
            w.x -= n;
            gamma = gamma.compose(&MoebiusInt::t_power(n as i64))?;
        }
        let r2 = w.x * w.x + w.y * w.y;
        if r2 < 1.0 || (r2 == 1.0 && w.x > 0.0) {
            w = Point { x: -w.x / r2, y: w.y / r2 };
            gamma = gamma.compose(&MoebiusInt::S)?;
            continue;
        }
        if (-0.5..0.5).contains(&w.x) {
            return Ok((w, gamma));
        }
    }
    Err(LatticeError::Overflow)
}

/// Coset representatives of `Γ(2)` in `PSL2(Z)`: `I, T, S, TS, ST, TST`.
pub fn level2_coset_reps() -> [MoebiusInt; 6] {
    let (s, t) = (MoebiusInt::S, MoebiusInt::T);
    let ts = t.compose(&s).expect("small");
    let st = s.compose(&t).expect("small");
    [MoebiusInt::IDENTITY, t, s, ts, st, t.compose(&st).expect("small")]
}

fn mod2(m: &MoebiusInt) -> [i64; 4] {
    [m.a, m.b, m.c, m.d].map(|v| v.rem_euclid(2))
}

fn level2_coset(m: &MoebiusInt) -> MoebiusInt {
    let key = mod2(m);
    level2_coset_reps().into_iter().find(|r| mod2(r) == key).expect("SL2(F2) has six elements")
}

/// Growth-rate estimate of the orbit counting function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthEstimate {
    /// `(1/n) ln Card{n - 1 < d ≤ n}` at the last whole annulus.
    pub estimate: f64,
    /// `ln` of the ratio of the last two annulus counts.
    pub log_ratio: f64,
    /// Spread between the two estimators plus the counting noise of the last annulus.
    pub uncertainty: f64,
}

/// Annulus sums `S_n = Σ_{n-1 < d ≤ n} w(d)` for `n = 1..=⌊t⌋`.
pub fn annulus_sums(displacements: &[f64], t_max: f64, weight: impl Fn(f64) -> f64) -> Vec<f64> {
    let n = t_max.floor() as usize;
    let mut sums = vec![0.0; n];
    for &d in displacements {
        if d > 0.0 && d <= n as f64 {
            let k = (d.ceil() as usize).max(1);
            sums[k - 1] += weight(d);
        }
    }
    sums
}

/// Estimate from annulus sums.
pub fn growth_from_annuli(sums: &[f64], counts: &[f64]) -> GrowthEstimate {
    let n = sums.len();
    let last = sums[n - 1];
    let prev = sums[n - 2];
    let estimate = last.ln() / n as f64;
    let log_ratio = (last / prev).ln();
    let noise = counts[n - 1].max(1.0).sqrt().recip();
    GrowthEstimate { estimate, log_ratio, uncertainty: (estimate - log_ratio).abs() + noise }
}

/// The critical exponent of the group: the configured exact value, or an
/// estimate from the orbit of `i·2` up to `t = 12`.
pub fn critical_exponent(g: &LatticeGroup) -> f64 {
    if let Some(d) = g.delta {
        return d;
    }
    critical_exponent_estimate(g, Point::on_axis(2.0), 12.0).map(|e| e.log_ratio).unwrap_or(f64::NAN)
}

pub fn critical_exponent_estimate(g: &LatticeGroup, x0: Point<f64>, t_max: f64) -> Result<GrowthEstimate> {
    if t_max < 2.0 {
        return Err(LatticeError::Unsupported("estimator needs at least two annuli"));
    }
    let ds = ball_displacements(g, x0, t_max.floor())?;
    let counts = annulus_sums(&ds, t_max, |_| 1.0);
    Ok(growth_from_annuli(&counts, &counts))
}

/// `d(x0, γx0)` for every `γ` of the ball, in canonical element order.
pub fn ball_displacements(g: &LatticeGroup, x0: Point<f64>, t: f64) -> Result<Vec<f64>> {
    Ok(ball_with_displacements(g, x0, t)?.into_iter().map(|(_, d)| d).collect())
}

/// The ball paired with `d(x0, γx0)`, in canonical element order.
pub fn ball_with_displacements(g: &LatticeGroup, x0: Point<f64>, t: f64) -> Result<Vec<(MoebiusInt, f64)>> {
    let ball = enumerate_ball(g, x0, t)?;
    let form = BallForm::exact(x0);
    Ok(ball
        .into_par_iter()
        .map(|m| {
            let d = match &form {
                Some(f) => f.displacement(&m),
                None => dist(x0, m.to_real::<f64>().apply_point(x0)),
            };
            (m, d)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point<f64> {
        Point::new(x, y).unwrap()
    }

    fn totient(n: i64) -> i64 {
        (1..=n).filter(|k| k.gcd(&n) == 1).count() as i64
    }

    #[test]
    fn small_balls() {
        let g = LatticeGroup::psl2z();
        assert_eq!(enumerate_ball(&g, p(0.0, 2.0), 0.0).unwrap(), vec![MoebiusInt::IDENTITY]);
        let at_i = enumerate_ball(&g, Point::i(), 0.0).unwrap();
        assert_eq!(at_i.len(), 2);
        assert!(at_i.contains(&MoebiusInt::S));
        // direct check: S fixes i
        assert!(MoebiusInt::S.to_real::<f64>().apply_point(Point::i()).approx_eq(&Point::i(), 1e-15));
        assert_eq!(point_stabilizer(&g, Point::i()).unwrap().len(), 2);
    }

    #[test]
    fn form_matches_frobenius_at_i() {
        let f = BallForm::exact(Point::i()).unwrap();
        for m in enumerate_ball(&LatticeGroup::psl2z(), Point::i(), 4.0).unwrap() {
            assert_eq!(f.value(&m).unwrap(), m.frobenius_sq());
        }
    }

    #[test]
    fn ball_against_brute_force() {
        // oracle: every canonical det-one matrix with small entries
        let g = LatticeGroup::psl2z();
        let z = p(0.25, 1.5);
        let t = 3.0;
        let mut brute = BTreeSet::new();
        for a in -12i64..=12 {
            for b in -12i64..=12 {
                for c in -12i64..=12 {
                    for d in -12i64..=12 {
                        if a * d - b * c == 1 {
                            let m = MoebiusInt::from_unchecked(a, b, c, d);
                            if dist(z, m.to_real::<f64>().apply_point(z)) <= t {
                                brute.insert(m);
                            }
                        }
                    }
                }
            }
        }
        let ball: BTreeSet<_> = enumerate_ball(&g, z, t).unwrap().into_iter().collect();
        assert_eq!(ball, brute);
        let irrational = p(0.1 * 2f64.sqrt(), 1.3 + 1e-7);
        let ball = enumerate_ball(&g, irrational, t).unwrap();
        let mut brute = Vec::new();
        for m in enumerate_ball(&g, irrational, t + 0.5).unwrap() {
            if dist(irrational, m.to_real::<f64>().apply_point(irrational)) <= t {
                brute.push(m);
            }
        }
        assert_eq!(ball, brute);
    }

    #[test]
    fn ball_matches_bfs() {
        for g in [LatticeGroup::psl2z(), LatticeGroup::gamma2()] {
            for t in [0.0, 2.5, 6.0] {
                let a = enumerate_ball(&g, p(0.0, 2.0), t).unwrap();
                let b = bfs_ball(&g, p(0.0, 2.0), t).unwrap();
                assert_eq!(a, b, "{} t={t}", g.name);
            }
        }
    }

    #[test]
    fn ball_is_closed_under_inverse_and_membership() {
        let g = LatticeGroup::gamma2();
        let ball = enumerate_ball(&g, p(0.0, 2.0), 7.0).unwrap();
        let set: BTreeSet<_> = ball.iter().copied().collect();
        for m in &ball {
            assert!(in_gamma2(m));
            assert!(set.contains(&m.inverse()));
        }
        for gen in &g.generators {
            assert!(g.contains(gen));
            for m in ball.iter().take(200) {
                assert!(g.contains(&m.compose(gen).unwrap()));
            }
        }
    }

    #[test]
    fn growth_corridor() {
        let g = LatticeGroup::psl2z();
        let ds = ball_displacements(&g, p(0.0, 2.0), 12.0).unwrap();
        let mut prev = 0;
        for t in [8.0, 9.0, 10.0, 11.0, 12.0] {
            let n = ds.iter().filter(|&&d| d <= t).count();
            assert!(n >= prev);
            prev = n;
            let ratio = n as f64 * (-t).exp();
            assert!((2.5..3.5).contains(&ratio), "t={t} ratio={ratio}");
        }
    }

    #[test]
    fn budget_and_overflow() {
        let g = LatticeGroup::psl2z().with_cap(100);
        assert_eq!(enumerate_ball(&g, p(0.0, 2.0), 8.0), Err(LatticeError::BudgetExceeded(100)));
        assert_eq!(enumerate_ball(&LatticeGroup::psl2z(), p(0.0, 2.0), 60.0), Err(LatticeError::Overflow));
    }

    #[test]
    fn cusp_translates_are_farey_horoballs() {
        let g = LatticeGroup::psl2z();
        let base = ConvexSet::Horoball { center: BoundaryPoint::Infinity, size: 1.0 };
        let fam = enumerate_translates(&g, &base, p(0.0, 2.0), 8.0).unwrap();
        let small: Vec<f64> = fam
            .reps
            .iter()
            .filter_map(|(_, s)| match s {
                ConvexSet::Horoball { center: BoundaryPoint::Finite(x), size } if (0.0..1.0).contains(x) => {
                    let c = (1.0 / size).sqrt().round() as i64;
                    (c == 2 || c == 3).then_some(*x)
                }
                _ => None,
            })
            .collect();
        let mut expect = vec![0.5, 1.0 / 3.0, 2.0 / 3.0];
        let mut got = small.clone();
        got.sort_by(f64::total_cmp);
        expect.sort_by(f64::total_cmp);
        assert_eq!(got.len(), 3);
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
        // each image has diameter 1/c² at a/c; T-translates are merged
        for (m, s) in &fam.reps {
            assert!(s.approx_eq(&base.transform(&m.to_real()), 1e-12));
        }
        let mut twice = fam.clone();
        let t_shifted = fam.reps[0].0.compose(&MoebiusInt::T).unwrap();
        twice.reps.push((t_shifted, base.transform(&t_shifted.to_real())));
        twice.dedup();
        assert_eq!(twice.len(), fam.len());
        let once = twice.reps.clone();
        twice.dedup();
        assert_eq!(twice.reps, once);
    }

    #[test]
    fn point_translates_at_zero_radius() {
        let g = LatticeGroup::psl2z();
        let fam = enumerate_translates(&g, &ConvexSet::PointSet(p(0.0, 2.0)), p(0.0, 2.0), 0.0).unwrap();
        assert_eq!(fam.reps, vec![(MoebiusInt::IDENTITY, ConvexSet::PointSet(p(0.0, 2.0)))]);
    }

    #[test]
    fn census_identities() {
        let g = LatticeGroup::psl2z();
        let x0 = ConvexSet::PointSet(p(0.0, 2.0));
        let loops = perp_census(&g, &x0, &x0, 6.0).unwrap();
        assert_eq!(loops.len(), enumerate_ball(&g, p(0.0, 2.0), 6.0).unwrap().len() - 1);
        let h = ConvexSet::Horoball { center: BoundaryPoint::Infinity, size: 1.0 };
        let cusp = perp_census(&g, &h, &h, 2.0 * 3f64.ln()).unwrap();
        assert_eq!(cusp.len() as i64, totient(2) + totient(3));
        for rec in loops.iter().chain(&cusp) {
            assert!(crate::hyp2::flow(rec.perp.u, rec.perp.length).approx_eq(&rec.perp.v, 1e-9));
            assert!(rec.perp.length > 0.0);
        }
        let big = perp_census(&g, &h, &h, 2.0 * 60f64.ln()).unwrap();
        assert_eq!(big.len() as i64, (2..=60).map(totient).sum::<i64>());
        for rec in &big {
            assert_eq!(rec.perp.length, 2.0 * (rec.rep_plus.c.abs() as f64).ln());
        }
        let g2 = LatticeGroup::gamma2();
        let cusp2 = perp_census(&g2, &h, &h, 2.0 * 20f64.ln()).unwrap();
        let expect: i64 = (2..=20).filter(|c| c % 2 == 0).map(|c| 2 * totient(c)).sum();
        assert_eq!(cusp2.len() as i64, expect);
    }

    #[test]
    fn census_is_brute_force_complete_for_mixed_pairs() {
        // oracle: translates taken from a much larger ball, filtered by distance
        let g = LatticeGroup::psl2z();
        let z = p(0.1, 1.7);
        let pt = ConvexSet::PointSet(z);
        let h = ConvexSet::Horoball { center: BoundaryPoint::Infinity, size: 1.0 };
        let t = 4.0;
        let census = perp_census(&g, &pt, &h, t).unwrap();
        let mut lens: Vec<f64> = census.iter().map(|r| r.perp.length).collect();
        lens.sort_by(f64::total_cmp);
        let mut oracle = Vec::new();
        for a in -400i64..=400 {
            for c in 0i64..=40 {
                if a.gcd(&c) != 1 || (c == 0 && a != 1) {
                    continue;
                }
                let img = if c == 0 { h } else { cusp_image(a, c, 1.0) };
                let d = set_dist(&pt, &img);
                if d > 0.0 && d <= t {
                    oracle.push(d);
                }
            }
        }
        oracle.sort_by(f64::total_cmp);
        assert_eq!(lens.len(), oracle.len());
        for (a, b) in lens.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
        // reversed pair gives the same length spectrum
        let back = perp_census(&g, &h, &pt, t).unwrap();
        let mut blens: Vec<f64> = back.iter().map(|r| r.perp.length).collect();
        blens.sort_by(f64::total_cmp);
        assert_eq!(blens.len(), lens.len());
        for (a, b) in lens.iter().zip(&blens) {
            assert!((a - b).abs() < 1e-9);
        }
        for r in &back {
            assert!(r.perp.u.base.x >= -1e-12 && r.perp.u.base.x < 1.0);
        }
    }

    #[test]
    fn counts_are_symmetric_in_the_two_sets() {
        // Card Perp(A⁻, A⁺, t) with multiplicities does not depend on the order
        let g = LatticeGroup::psl2z();
        let s5 = 5f64.sqrt();
        let (xi, eta) = (BoundaryPoint::Finite((1.0 + s5) / 2.0), BoundaryPoint::Finite((1.0 - s5) / 2.0));
        let r = geodesic_reversal(&g, xi, eta).unwrap().expect("S-conjugate swaps the ends");
        assert!(r.to_real::<f64>().apply_boundary(xi).approx_eq(&eta, 1e-9));
        let sets = [
            ConvexSet::GeodesicLine(xi, eta),
            ConvexSet::GeodesicLine(BoundaryPoint::Finite(-3f64.sqrt()), BoundaryPoint::Finite(3f64.sqrt())),
            ConvexSet::Horoball { center: BoundaryPoint::Infinity, size: 1.0 },
            ConvexSet::PointSet(Point::i()),
            ConvexSet::PointSet(p(0.1, 1.9)),
        ];
        let count = |a: &ConvexSet<f64>, b: &ConvexSet<f64>| -> f64 {
            let recs = perp_census(&g, a, b, 5.5).unwrap();
            let reps: BTreeSet<MoebiusInt> = recs.iter().map(|r| r.rep_plus).collect();
            assert_eq!(reps.len(), recs.len(), "{a:?} -> {b:?}");
            recs.iter().map(|r| *r.multiplicity.numer() as f64 / *r.multiplicity.denom() as f64).sum()
        };
        for (i, a) in sets.iter().enumerate() {
            for b in &sets[i + 1..] {
                assert_eq!(count(a, b), count(b, a), "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn closed_geodesic_census() {
        // axis of [2 1; 1 1], translation length 2 arcosh(3/2)
        let g = LatticeGroup::psl2z();
        let m = MoebiusInt::new(2, 1, 1, 1).unwrap();
        let s5 = 5f64.sqrt();
        let axis = ConvexSet::GeodesicLine(BoundaryPoint::Finite((1.0 + s5) / 2.0), BoundaryPoint::Finite((1.0 - s5) / 2.0));
        let (gen, len) = geodesic_stabilizer(&g, BoundaryPoint::Finite((1.0 + s5) / 2.0), BoundaryPoint::Finite((1.0 - s5) / 2.0)).unwrap();
        assert!((len - 2.0 * 1.5f64.acosh()).abs() < 1e-12);
        assert!(gen == m || gen == m.inverse());
        let pt = ConvexSet::PointSet(p(0.0, 2.0));
        let t = 5.0;
        let from_pt = perp_census(&g, &pt, &axis, t).unwrap();
        let to_pt = perp_census(&g, &axis, &pt, t).unwrap();
        assert_eq!(from_pt.len(), to_pt.len());
        let geo = perp_census(&g, &axis, &axis, t).unwrap();
        let mut again: Vec<f64> = geo.iter().map(|r| r.perp.length).collect();
        again.sort_by(f64::total_cmp);
        let mut rev: Vec<f64> = perp_census(&g, &axis, &axis, t).unwrap().iter().map(|r| r.perp.length).collect();
        rev.sort_by(f64::total_cmp);
        assert_eq!(again, rev);
        assert!(!geo.is_empty());
    }

    #[test]
    fn elliptic_basepoint_multiplicity() {
        let g = LatticeGroup::psl2z();
        let i = ConvexSet::PointSet(Point::i());
        let loops = perp_census(&g, &i, &i, 5.0).unwrap();
        let ball = enumerate_ball(&g, Point::i(), 5.0).unwrap().len();
        // ball counts γ mod ±1; translates quotient by Stab(i) on both sides
        assert!(loops.len() * 4 >= ball - 2);
        assert!(loops.iter().all(|r| *r.multiplicity.numer() == 1));
    }

    #[test]
    fn reduction_examples() {
        let g = LatticeGroup::psl2z();
        let (w, m) = reduce_fd(&g, p(2.0, 2.0)).unwrap();
        assert!(w.approx_eq(&p(0.0, 2.0), 1e-15));
        assert_eq!(m, MoebiusInt::t_power(2));
        let (w, m) = reduce_fd(&g, p(0.0, 0.2)).unwrap();
        assert!(w.approx_eq(&p(0.0, 5.0), 1e-12));
        assert_eq!(m, MoebiusInt::S);
        let (w, m) = reduce_fd(&g, p(0.5, 2.0)).unwrap();
        assert_eq!(w, p(-0.5, 2.0));
        assert_eq!(m, MoebiusInt::T);
        let mut custom = LatticeGroup::psl2z();
        custom.reduction = None;
        assert!(matches!(reduce_fd(&custom, p(0.0, 2.0)), Err(LatticeError::NoReductionRule(_))));
    }

    #[test]
    fn coset_reps_are_distinct() {
        let reps = level2_coset_reps();
        let keys: BTreeSet<_> = reps.iter().map(mod2).collect();
        assert_eq!(keys.len(), 6);
    }

    #[test]
    fn critical_exponents() {
        assert_eq!(critical_exponent(&LatticeGroup::psl2z()), 1.0);
        assert_eq!(critical_exponent(&LatticeGroup::gamma2()), 1.0);
        let mut open = LatticeGroup::psl2z();
        open.delta = None;
        let e = critical_exponent_estimate(&open, p(0.0, 2.0), 12.0).unwrap();
        assert!((e.log_ratio - 1.0).abs() <= 0.05, "{e:?}");
        assert!((e.estimate - 1.0).abs() <= e.uncertainty, "{e:?}");
        let e8 = critical_exponent_estimate(&open, p(0.0, 2.0), 8.0).unwrap();
        assert!(e.uncertainty < e8.uncertainty);
        let g2 = critical_exponent_estimate(&LatticeGroup::gamma2(), p(0.0, 2.0), 12.0).unwrap();
        assert!((g2.log_ratio - 1.0).abs() <= 0.05, "{g2:?}");
    }

    fn arb_point() -> impl Strategy<Value = Point<f64>> {
        (-3.0..3.0f64, 0.05..4.0f64).prop_map(|(x, y)| p(x, y))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn reduction_lands_in_domain(z in arb_point()) {
            let g = LatticeGroup::psl2z();
            let (w, m) = reduce_fd(&g, z).unwrap();
            prop_assert!(w.x >= -0.5 && w.x < 0.5);
            prop_assert!(w.x * w.x + w.y * w.y >= 1.0 - 1e-12);
            prop_assert!(m.to_real::<f64>().apply_point(w).approx_eq(&z, 1e-9 * (1.0 + z.y.recip())));
            let g2 = LatticeGroup::gamma2();
            let (w2, m2) = reduce_fd(&g2, z).unwrap();
            prop_assert!(in_gamma2(&m2));
            prop_assert!(m2.to_real::<f64>().apply_point(w2).approx_eq(&z, 1e-9 * (1.0 + z.y.recip())));
        }

        #[test]
        fn conjugated_loop_lengths_agree(a in -3i64..3, c in -3i64..3) {
            prop_assume!(a.gcd(&c) == 1);
            let k = complete_column(&LatticeGroup::psl2z(), a, c.abs().max(1));
            let g = LatticeGroup::psl2z();
            let z = p(0.0, 2.0);
            let kz = k.to_real::<f64>().apply_point(z);
            let base: Vec<f64> = perp_census(&g, &ConvexSet::PointSet(z), &ConvexSet::PointSet(z), 4.0).unwrap().iter().map(|r| r.perp.length).collect();
            let conj: Vec<f64> = perp_census(&g, &ConvexSet::PointSet(kz), &ConvexSet::PointSet(kz), 4.0).unwrap().iter().map(|r| r.perp.length).collect();
            let (mut x, mut y) = (base, conj);
            x.sort_by(f64::total_cmp);
            y.sort_by(f64::total_cmp);
            prop_assert_eq!(x.len(), y.len());
            for (u, v) in x.iter().zip(&y) {
                prop_assert!((u - v).abs() < 1e-8);
            }
        }
    }
}
