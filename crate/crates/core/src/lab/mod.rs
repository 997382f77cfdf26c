//! Experiments on perpendicular censuses: counting, equidistribution of the
//! measures `μ_t`, directions, weighted sums, and the loop figure.

pub mod acceptance;
mod output;

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{CommonPerp, ConvexError, ConvexSet};
use crate::gibbs::{amplitude_along, weighted_context, GibbsContext, GibbsError, Potential};
use crate::hyp2::{flip, flow, BoundaryPoint, Moebius, MoebiusInt, Point, UnitTangent};
use crate::lattice::{perp_census, reduce_fd, reduce_vector, LatticeError, LatticeGroup, PerpRecord, Reduction};
use crate::measures::{bm_integrate_many, MeasureContext, MeasureError, QuadratureSpec, TestFunction};

pub use output::{census_csv, directions_csv, fmt_float, render_loops_svg, report_csv, svg_chart};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Gibbs(#[from] GibbsError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    Geometry(#[from] crate::hyp2::GeometryError),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl LabError {
    fn lattice(&self) -> Option<&LatticeError> {
        match self {
            LabError::Lattice(e) | LabError::Measure(MeasureError::Lattice(e)) | LabError::Gibbs(GibbsError::Lattice(e)) => Some(e),
            _ => None,
        }
    }

    /// 2 for exhausted budgets and integer overflow, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match (self, self.lattice()) {
            (_, Some(LatticeError::BudgetExceeded(_) | LatticeError::Overflow)) | (LabError::Geometry(crate::hyp2::GeometryError::Overflow), _) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;

/// Convex set descriptor; `inf` stands for the point at infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    Point { x: f64, y: f64 },
    Geodesic { from: f64, to: f64 },
    Horoball { center: f64, size: f64 },
    Disk { x: f64, y: f64, radius: f64 },
}

fn boundary(r: f64) -> BoundaryPoint<f64> {
    if r.is_infinite() {
        BoundaryPoint::Infinity
    } else {
        BoundaryPoint::Finite(r)
    }
}

impl SetSpec {
    pub fn build(&self) -> Result<ConvexSet<f64>> {
        let point = |x: f64, y: f64| Point::new(x, y).map_err(|e| LabError::Config(e.to_string()));
        Ok(match *self {
            SetSpec::Point { x, y } => ConvexSet::PointSet(point(x, y)?),
            SetSpec::Geodesic { from, to } => ConvexSet::geodesic(boundary(from), boundary(to))?,
            SetSpec::Horoball { center, size } => ConvexSet::horoball(boundary(center), size)?,
            SetSpec::Disk { x, y, radius } => ConvexSet::disk(point(x, y)?, radius)?,
        })
    }
}

/// Output file names, relative to the `--out` directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub census: String,
    pub count: String,
    pub equi: String,
    pub weighted: String,
    pub directions: String,
    pub masses: String,
    pub svg: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            census: "census.csv".into(),
            count: "count.csv".into(),
            equi: "equi.csv".into(),
            weighted: "weighted.csv".into(),
            directions: "directions.csv".into(),
            masses: "masses.json".into(),
            svg: "loops.svg".into(),
        }
    }
}

fn default_basepoint() -> [f64; 2] {
    [0.0, 2.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub group: String,
    pub set_minus: SetSpec,
    pub set_plus: SetSpec,
    #[serde(default = "default_basepoint")]
    pub basepoint: [f64; 2],
    pub t_grid: Vec<f64>,
    #[serde(default)]
    pub potential: Option<Potential>,
    #[serde(default = "TestFunction::builtins")]
    pub test_functions: Vec<TestFunction>,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputPaths,
    /// 0 uses every available core.
    #[serde(default)]
    pub threads: usize,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data")
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() {
            return Err(LabError::Config("t_grid is empty".into()));
        }
        if self.t_grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) || self.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(LabError::Config("t_grid must be positive and strictly increasing".into()));
        }
        if let Some(p) = &self.potential {
            p.validate()?;
        }
        self.group()?;
        self.sets()?;
        Ok(())
    }

    pub fn t_max(&self) -> f64 {
        *self.t_grid.last().expect("validated")
    }

    /// Cut the grid at `t`, appending `t` if the grid stops below it.
    pub fn with_t_max(mut self, t: f64) -> Result<Self> {
        self.t_grid.retain(|&s| s <= t);
        if self.t_grid.last().map(|&s| s < t).unwrap_or(true) {
            self.t_grid.push(t);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn group(&self) -> Result<LatticeGroup> {
        LatticeGroup::by_name(&self.group).ok_or_else(|| LabError::Config(format!("unknown group {:?}", self.group)))
    }

    pub fn sets(&self) -> Result<(ConvexSet<f64>, ConvexSet<f64>)> {
        Ok((self.set_minus.build()?, self.set_plus.build()?))
    }

    pub fn basepoint(&self) -> Result<Point<f64>> {
        Point::new(self.basepoint[0], self.basepoint[1]).map_err(|e| LabError::Config(e.to_string()))
    }
}

/// Loads the context from `cache` when it matches the config, builds it otherwise
/// (and then writes the cache).
pub fn measure_context(cfg: &ExperimentConfig, cache: Option<&Path>) -> Result<MeasureContext> {
    let g = cfg.group()?;
    let (dm, dp) = cfg.sets()?;
    if let Some(path) = cache.filter(|p| p.exists()) {
        let ctx = MeasureContext::from_json(&std::fs::read_to_string(path)?)?;
        if ctx.covers(&g, &cfg.quadrature, &[dm, dp]) {
            return Ok(ctx);
        }
    }
    let ctx = MeasureContext::build(&g, cfg.quadrature, &[dm, dp])?;
    if let Some(path) = cache {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, ctx.to_json())?;
    }
    Ok(ctx)
}

/// Census at the largest grid value; smaller values are filtered from it.
pub fn census(cfg: &ExperimentConfig) -> Result<Vec<PerpRecord>> {
    let (dm, dp) = cfg.sets()?;
    Ok(perp_census(&cfg.group()?, &dm, &dp, cfg.t_max())?)
}

/// Sets `weight = exp(∫_α F)` on every record.
pub fn apply_potential(records: &mut [PerpRecord], f: &Potential) -> Result<()> {
    let weights: Vec<f64> = records.par_iter().map(|r| Ok(amplitude_along(&r.perp, f)?.exp())).collect::<Result<_>>()?;
    for (r, w) in records.iter_mut().zip(weights) {
        r.weight = w;
    }
    Ok(())
}

pub fn multiplicity(r: &PerpRecord) -> f64 {
    *r.multiplicity.numer() as f64 / *r.multiplicity.denom() as f64
}

// ---------------------------------------------------------------------------
// Integrals along perpendiculars

/// Gauss–Kronrod 7/15 pair on `[-1, 1]`: Kronrod nodes `x ≥ 0` with Kronrod
/// weights, and the Gauss weight for the nodes shared with the 7-point rule.
const GK15: [(f64, f64, f64); 8] = [
    (0.991_455_371_120_812_6, 0.022_935_322_010_529_224, 0.0),
    (0.949_107_912_342_758_5, 0.063_092_092_629_978_55, 0.129_484_966_168_869_7),
    (0.864_864_423_359_769_1, 0.104_790_010_322_250_18, 0.0),
    (0.741_531_185_599_394_4, 0.140_653_259_715_525_92, 0.279_705_391_489_276_7),
    (0.586_087_235_467_691_1, 0.169_004_726_639_267_9, 0.0),
    (0.405_845_151_377_397_2, 0.190_350_578_064_785_4, 0.381_830_050_505_118_9),
    (0.207_784_955_007_898_47, 0.204_432_940_075_298_9, 0.0),
    (0.0, 0.209_482_141_084_727_83, 0.417_959_183_673_469_4),
];

const CHUNK: f64 = 1.0;
const PIECE: f64 = 0.125;
const KINK_WIDTH: f64 = 1e-7;
const LEB_TOL: f64 = 1e-7;
const MAX_DEPTH: usize = 24;

/// Range of `Im m(i eˢ) = eˢ/(c²e²ˢ + d²)` over `[a, b]`; it increases up to
/// `eˢ = |d/c|` and decreases after.
fn height_range(m: &Moebius<f64>, a: f64, b: f64) -> (f64, f64) {
    let h = |s: f64| s.exp() / (m.c * m.c * (2.0 * s).exp() + m.d * m.d);
    let (ha, hb) = (h(a), h(b));
    let (lo, mut hi) = (ha.min(hb), ha.max(hb));
    if m.c != 0.0 && m.d != 0.0 {
        let peak = (m.d / m.c).abs().ln();
        if a < peak && peak < b {
            hi = hi.max(h(peak));
        }
    }
    // margin for rounding in the chart
    (lo * (1.0 - 1e-9), hi * (1.0 + 1e-9))
}

const EXIT_GAP: f64 = 1e-9;
const MAX_EXITS: usize = 10_000;

/// First time in `(s + EXIT_GAP, end]` at which `t ↦ m·(i eᵗ)` meets a circle
/// `|z - n| = 1`. Only circles separating the two endpoints of the geodesic
/// meet it, and those are centred next to an endpoint.
fn modular_exit(m: &Moebius<f64>, s: f64, end: f64) -> Option<f64> {
    let endpoint = |p: f64, q: f64| if q == 0.0 { None } else { Some(p / q) };
    let (e1, e2) = (endpoint(m.b, m.d), endpoint(m.a, m.c));
    let inv = m.inverse();
    let mut best: Option<f64> = None;
    for e in [e1, e2].into_iter().flatten() {
        for n in [e.floor(), e.floor() + 1.0] {
            let hit = match (e1, e2) {
                (Some(a), Some(b)) => {
                    if ((a - n).abs() < 1.0) == ((b - n).abs() < 1.0) {
                        continue;
                    }
                    let x = (n * n - 1.0 - a * b) / (2.0 * n - a - b);
                    Point { x, y: (1.0 - (x - n) * (x - n)).max(0.0).sqrt() }
                }
                _ => {
                    if (e - n).abs() >= 1.0 {
                        continue;
                    }
                    Point { x: e, y: (1.0 - (e - n) * (e - n)).sqrt() }
                }
            };
            if !(hit.y > 0.0) {
                continue;
            }
            let w = inv.apply_point(hit);
            let t = w.x.hypot(w.y).ln();
            if t > s + EXIT_GAP && t <= end && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    }
    best
}

/// Symmetries of loop censuses: the reversed loop sees `ψ ∘ flip`, the loop
/// conjugated by `z ↦ -z̄` sees `ψ` of the mirrored vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    Id,
    Flip,
    Mirror,
    MirrorFlip,
}

impl Symmetry {
    /// Image of a reduced vector; the modular domain is mirror symmetric.
    fn apply(self, v: &UnitTangent<f64>) -> UnitTangent<f64> {
        let mirror = |v: &UnitTangent<f64>| UnitTangent::new(Point { x: -v.base.x, y: v.base.y }, PI - v.angle);
        match self {
            Symmetry::Id => *v,
            Symmetry::Flip => flip(*v),
            Symmetry::Mirror => mirror(v),
            Symmetry::MirrorFlip => flip(mirror(v)),
        }
    }

    /// The translate giving the transformed loop.
    fn partner(self, gamma: &MoebiusInt) -> Option<MoebiusInt> {
        let m = |g: &MoebiusInt| MoebiusInt::new(g.a, -g.b, -g.c, g.d).ok();
        match self {
            Symmetry::Id => Some(*gamma),
            Symmetry::Flip => Some(gamma.inverse()),
            Symmetry::Mirror => m(gamma),
            Symmetry::MirrorFlip => m(&gamma.inverse()),
        }
    }
}

/// One unit of flow from a reduced vector, `s ↦ frame·(i eˢ, up)`. The
/// integrands are `ψ_k ∘ syms[j]`, indexed `j·psis.len() + k`.
struct FlowSegment<'a> {
    g: &'a LatticeGroup,
    frame: Moebius<f64>,
    psis: &'a [TestFunction],
    syms: &'a [Symmetry],
}

impl FlowSegment<'_> {
    fn at(&self, s: f64) -> UnitTangent<f64> {
        self.frame.apply_tangent(UnitTangent::upward(Point::on_axis(s.exp())))
    }

    fn branch(&self, s: f64) -> Result<MoebiusInt> {
        Ok(reduce_fd(self.g, self.at(s).base)?.1)
    }

    fn modular(&self) -> bool {
        self.g.reduction == Some(Reduction::Modular)
    }

    /// Equal reducing elements, and for the modular group equal up to right
    /// translations `T^n`: the reduced vectors then differ by `x ↦ x + n`.
    fn same(&self, a: &MoebiusInt, b: &MoebiusInt) -> bool {
        if self.modular() {
            (a.a == b.a && a.c == b.c) || (a.a == -b.a && a.c == -b.c)
        } else {
            a == b
        }
    }

    fn sample(&self, s: f64, fixed: Option<&Moebius<f64>>) -> Result<UnitTangent<f64>> {
        Ok(match fixed {
            Some(m) => {
                let mut v = m.apply_tangent(UnitTangent::upward(Point::on_axis(s.exp())));
                if self.modular() {
                    v.base.x -= v.base.x.round();
                }
                v
            }
            None => reduce_vector(self.g, self.at(s))?.0,
        })
    }

    /// Kronrod estimates on `[a, b]` for the integrands `live`, each with its
    /// difference to the embedded Gauss rule.
    fn kronrod(&self, a: f64, b: f64, fixed: Option<&Moebius<f64>>, live: &[usize]) -> Result<Vec<(f64, f64)>> {
        let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
        let np = self.psis.len();
        let mut acc = vec![(0.0, 0.0); live.len()];
        let mut images = [UnitTangent::upward(Point::i()); 4];
        for &(x, wk, wg) in &GK15 {
            let nodes: &[f64] = if x == 0.0 { &[0.0] } else { &[-x, x] };
            for &u in nodes {
                let v = self.sample(mid + half * u, fixed)?;
                for (img, sym) in images.iter_mut().zip(self.syms) {
                    *img = sym.apply(&v);
                }
                for (o, &i) in acc.iter_mut().zip(live) {
                    let f = self.psis[i % np].eval_reduced(&images[i / np]);
                    o.0 += wk * f;
                    o.1 += wg * f;
                }
            }
        }
        Ok(acc.into_iter().map(|(k, g)| (half * k, half * (k - g).abs())).collect())
    }

    /// Adaptive bisection; each integrand is refined until its Gauss–Kronrod
    /// difference is below [`LEB_TOL`].
    fn adaptive(&self, a: f64, b: f64, fixed: Option<&Moebius<f64>>, live: &[usize], depth: usize, out: &mut [f64]) -> Result<()> {
        let est = self.kronrod(a, b, fixed, live)?;
        let mut rest = Vec::new();
        for (&i, &(value, err)) in live.iter().zip(&est) {
            if err <= LEB_TOL || depth >= MAX_DEPTH {
                out[i] += value;
            } else {
                rest.push(i);
            }
        }
        if rest.is_empty() {
            return Ok(());
        }
        let m = (a + b) / 2.0;
        self.adaptive(a, m, fixed, &rest, depth + 1, out)?;
        self.adaptive(m, b, fixed, &rest, depth + 1, out)
    }

    /// Integrates over `[a, b]`. Along a fixed branch, functions that are
    /// constant over the heights reached are not sampled.
    fn smooth(&self, a: f64, b: f64, branch: Option<&MoebiusInt>, out: &mut [f64]) -> Result<()> {
        if b <= a {
            return Ok(());
        }
        let fixed = branch.map(|g| g.inverse().to_real::<f64>().compose(&self.frame));
        let n = out.len();
        let np = self.psis.len();
        let mut live = Vec::with_capacity(n);
        match &fixed {
            Some(m) => {
                // heights are unchanged by the symmetries
                let (lo, hi) = height_range(m, a, b);
                for i in 0..n {
                    match self.psis[i % np].constant_on_heights(lo, hi) {
                        Some(c) => out[i] += c * (b - a),
                        None => live.push(i),
                    }
                }
                if live.is_empty() {
                    return Ok(());
                }
            }
            None => live.extend(0..n),
        }
        self.adaptive(a, b, fixed.as_ref(), &live, 0, out)
    }

    /// Both elements reduce the point into the closed modular domain: the
    /// segment runs along a side and the choice does not matter.
    fn tie(&self, s: f64, ga: &MoebiusInt, gb: &MoebiusInt) -> bool {
        if self.g.reduction != Some(Reduction::Modular) {
            return false;
        }
        let z = self.at(s).base;
        let inside = |g: &MoebiusInt| {
            let w = g.inverse().to_real::<f64>().apply_point(z);
            w.x.abs() <= 0.5 + 1e-10 && w.x * w.x + w.y * w.y >= 1.0 - 1e-10
        };
        inside(ga) && inside(gb)
    }

    fn piece(&self, a: f64, b: f64, ga: &MoebiusInt, gb: &MoebiusInt, out: &mut [f64]) -> Result<()> {
        let m = (a + b) / 2.0;
        if self.same(ga, gb) {
            let gm = self.branch(m)?;
            if self.same(&gm, ga) {
                return self.smooth(a, b, Some(ga), out);
            }
            if b - a < KINK_WIDTH {
                return self.smooth(a, b, None, out);
            }
            self.piece(a, m, ga, &gm, out)?;
            return self.piece(m, b, &gm, gb, out);
        }
        if b - a < KINK_WIDTH {
            return self.smooth(a, b, None, out);
        }
        if self.tie(a, ga, gb) && self.tie(m, ga, gb) && self.tie(b, ga, gb) {
            return self.smooth(a, b, Some(ga), out);
        }
        // isolate the first change of reducing element by bisection
        let (mut lo, mut hi) = (a, b);
        while hi - lo > KINK_WIDTH {
            let c = (lo + hi) / 2.0;
            if self.same(&self.branch(c)?, ga) {
                lo = c;
            } else {
                hi = c;
            }
        }
        self.smooth(a, lo, Some(ga), out)?;
        self.smooth(lo, hi, None, out)?;
        let gh = self.branch(hi)?;
        self.piece(hi, b, &gh, gb, out)
    }

    /// Modular group: the reducing element changes, up to `T^n`, exactly where
    /// the chart geodesic leaves the translates of the domain, so panels follow
    /// those exits.
    fn integrate_modular(&self, len: f64, out: &mut [f64]) -> Result<()> {
        let mut s = 0.0;
        let mut gamma = self.branch(0.0)?;
        for _ in 0..MAX_EXITS {
            let m = gamma.inverse().to_real::<f64>().compose(&self.frame);
            let end = modular_exit(&m, s, len).unwrap_or(len);
            let n = ((end - s) / PIECE).ceil().max(1.0) as usize;
            let h = (end - s) / n as f64;
            for k in 0..n {
                let b = if k + 1 == n { end } else { s + (k + 1) as f64 * h };
                self.smooth(s + k as f64 * h, b, Some(&gamma), out)?;
            }
            if end >= len {
                return Ok(());
            }
            s = end;
            gamma = self.branch((s + EXIT_GAP).min(len))?;
        }
        Err(LabError::InsufficientData(format!("more than {MAX_EXITS} side crossings in one unit of flow")))
    }

    fn integrate(&self, len: f64, out: &mut [f64]) -> Result<()> {
        if self.modular() {
            return self.integrate_modular(len, out);
        }
        let n = (len / PIECE).ceil().max(1.0) as usize;
        let h = len / n as f64;
        let mut ga = self.branch(0.0)?;
        for k in 0..n {
            let (a, b) = (k as f64 * h, if k + 1 == n { len } else { (k + 1) as f64 * h });
            let gb = self.branch(b)?;
            self.piece(a, b, &ga, &gb, out)?;
            ga = gb;
        }
        Ok(())
    }
}

fn leb_integrate_sym(g: &LatticeGroup, v: UnitTangent<f64>, len: f64, psis: &[TestFunction], syms: &[Symmetry]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; psis.len() * syms.len()];
    if !(len > 0.0) {
        return Ok(out);
    }
    let mut w = reduce_vector(g, v)?.0;
    let mut done = 0.0;
    while done < len {
        let step = CHUNK.min(len - done);
        FlowSegment { g, frame: w.frame(), psis, syms }.integrate(step, &mut out)?;
        w = reduce_vector(g, flow(w, step))?.0;
        done += step;
    }
    Ok(out)
}

/// `∫₀^len ψ_k(gˢ v) ds` for every `ψ_k`, each sample reduced into the fundamental domain.
pub fn leb_integrate_many(g: &LatticeGroup, v: UnitTangent<f64>, len: f64, psis: &[TestFunction]) -> Result<Vec<f64>> {
    leb_integrate_sym(g, v, len, psis, &[Symmetry::Id])
}

/// `Leb_α(ψ)`.
pub fn leb_integrate(g: &LatticeGroup, perp: &CommonPerp<f64>, psi: &TestFunction) -> Result<f64> {
    Ok(leb_integrate_many(g, perp.u, perp.length, std::slice::from_ref(psi))?[0])
}

/// Height-truncated constant used for the total mass `‖μ_t‖`.
pub const MASS_FUNCTION: TestFunction = TestFunction::Core { cutoff: 50.0 };

/// Per-record integrals of the configured test functions, with [`MASS_FUNCTION`] last.
#[derive(Debug, Clone, PartialEq)]
pub struct LebTable {
    pub psis: Vec<TestFunction>,
    pub lengths: Vec<f64>,
    pub multiplicities: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

pub fn leb_table(g: &LatticeGroup, records: &[PerpRecord], psis: &[TestFunction]) -> Result<LebTable> {
    let mut all = psis.to_vec();
    all.push(MASS_FUNCTION);
    let np = all.len();
    let orbits = loop_orbits(g, records);
    let parts = orbits
        .par_iter()
        .map(|orbit| {
            let r = &records[orbit[0].0];
            let syms: Vec<Symmetry> = orbit.iter().map(|m| m.1).collect();
            leb_integrate_sym(g, r.perp.u, r.perp.length, &all, &syms)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = vec![Vec::new(); records.len()];
    for (orbit, flat) in orbits.iter().zip(parts) {
        for (j, &(i, _)) in orbit.iter().enumerate() {
            values[i] = flat[j * np..(j + 1) * np].to_vec();
        }
    }
    Ok(LebTable { psis: all, lengths: records.iter().map(|r| r.length()).collect(), multiplicities: records.iter().map(multiplicity).collect(), values })
}

/// Groups loops at one point into orbits of the census symmetries, each listed
/// as `(record index, symmetry taking the first record's path to it)`.
/// Records that are not loops at a common point stay alone.
fn loop_orbits(g: &LatticeGroup, records: &[PerpRecord]) -> Vec<Vec<(usize, Symmetry)>> {
    let alone = || (0..records.len()).map(|i| vec![(i, Symmetry::Id)]).collect();
    let Some(first) = records.first() else { return Vec::new() };
    let base = first.perp.u.base;
    let loops = records.iter().all(|r| r.rep_minus == MoebiusInt::IDENTITY && r.perp.u.base == base && r.perp.length > 0.0);
    if !loops {
        return alone();
    }
    let mut syms = vec![Symmetry::Flip];
    if g.reduction == Some(Reduction::Modular) && base.x == 0.0 {
        syms.extend([Symmetry::Mirror, Symmetry::MirrorFlip]);
    }
    let index: std::collections::HashMap<MoebiusInt, usize> = records.iter().enumerate().map(|(i, r)| (r.rep_plus, i)).collect();
    let mut taken = vec![false; records.len()];
    let mut orbits = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if taken[i] {
            continue;
        }
        taken[i] = true;
        let mut orbit = vec![(i, Symmetry::Id)];
        for &s in &syms {
            let Some(j) = s.partner(&r.rep_plus).and_then(|p| index.get(&p).copied()) else { continue };
            if !taken[j] && (records[j].length() - r.length()).abs() <= 1e-9 * r.length() {
                taken[j] = true;
                orbit.push((j, s));
            }
        }
        orbits.push(orbit);
    }
    orbits
}

// ---------------------------------------------------------------------------
// Reports

/// One line of a count or equidistribution report. Absent quantities are NaN
/// (written as empty CSV fields).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub t: f64,
    /// Count with multiplicity (and weights, for weighted runs).
    pub n: f64,
    pub n_raw: usize,
    pub n_normalized: f64,
    pub psi_id: String,
    pub mu: f64,
    pub target: f64,
    pub rel_err: f64,
    pub total_mass: f64,
}

fn counting_constant(ctx: &MeasureContext, cfg: &ExperimentConfig) -> Result<f64> {
    let (dm, dp) = cfg.sets()?;
    ctx.counting_constant(&dm, &dp).ok_or_else(|| LabError::Config("measure context lacks skinning masses of the configured sets".into()))
}

fn psi_id(k: usize, psi: &TestFunction) -> String {
    format!("{k}:{}", psi.label())
}

/// `N(t)` and the ratio `N(t) / (C e^{δt})` with `C = ‖σ⁺‖‖σ⁻‖/(δ‖m_BM‖)`.
pub fn run_count(cfg: &ExperimentConfig, records: &[PerpRecord], ctx: &MeasureContext) -> Result<Vec<ReportRow>> {
    let c = counting_constant(ctx, cfg)?;
    Ok(cfg
        .t_grid
        .iter()
        .map(|&t| {
            let within: Vec<&PerpRecord> = records.iter().filter(|r| r.length() <= t).collect();
            let n: f64 = within.iter().map(|r| multiplicity(r)).sum();
            ReportRow {
                t,
                n,
                n_raw: within.len(),
                n_normalized: n / (c * (ctx.delta * t).exp()),
                psi_id: "count".into(),
                mu: f64::NAN,
                target: f64::NAN,
                rel_err: f64::NAN,
                total_mass: f64::NAN,
            }
        })
        .collect())
}

/// `m_BM(ψ)/‖m_BM‖` for the table's functions.
pub fn targets(table: &LebTable, ctx: &MeasureContext) -> Result<Vec<f64>> {
    let m = ctx.bm_total.value;
    Ok(bm_integrate_many(&table.psis, ctx)?.into_iter().map(|x| x / m).collect())
}

/// Weighted sums `Σ_{ℓ(α) ≤ t} m_α w_α Leb_α(ψ)` per grid point, in census order.
fn weighted_sums(table: &LebTable, weights: &[f64], t: f64) -> (f64, usize, Vec<f64>) {
    let k = table.psis.len();
    let (mut n, mut raw, mut sums) = (0.0, 0, vec![0.0; k]);
    for i in 0..table.lengths.len() {
        if table.lengths[i] <= t {
            let w = table.multiplicities[i] * weights[i];
            n += w;
            raw += 1;
            for (s, v) in sums.iter_mut().zip(&table.values[i]) {
                *s += w * v;
            }
        }
    }
    (n, raw, sums)
}

fn equi_rows(grid: &[f64], table: &LebTable, weights: &[f64], targets: &[f64], c: f64, delta: f64) -> Vec<ReportRow> {
    let k = table.psis.len() - 1;
    let mut rows = Vec::new();
    for &t in grid {
        let (n, raw, sums) = weighted_sums(table, weights, t);
        let growth = c * (delta * t).exp();
        let norm = 1.0 / (t * growth);
        let total_mass = sums[k] * norm;
        for j in 0..k {
            let mu = sums[j] * norm;
            rows.push(ReportRow {
                t,
                n,
                n_raw: raw,
                n_normalized: n / growth,
                psi_id: psi_id(j, &table.psis[j]),
                mu,
                target: targets[j],
                rel_err: (mu - targets[j]).abs() / targets[j].abs(),
                total_mass,
            });
        }
    }
    rows
}

/// `μ_t(ψ) = δ‖m_BM‖/(t e^{δt}‖σ⁺‖‖σ⁻‖) Σ_{ℓ(α) ≤ t} Leb_α(ψ)` against `m_BM(ψ)/‖m_BM‖`.
pub fn run_equi(cfg: &ExperimentConfig, table: &LebTable, ctx: &MeasureContext) -> Result<Vec<ReportRow>> {
    let c = counting_constant(ctx, cfg)?;
    let ones = vec![1.0; table.lengths.len()];
    Ok(equi_rows(&cfg.t_grid, table, &ones, &targets(table, ctx)?, c, ctx.delta))
}

/// Weighted report. `fitted` marks runs whose normalization is empirical.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedReport {
    pub rows: Vec<ReportRow>,
    pub fitted: bool,
    pub delta_f: f64,
    pub uncertainty: f64,
}

/// Largest `t` used to estimate `δ_F` for non-constant potentials.
pub const DELTA_F_HORIZON: f64 = 10.0;

/// Potential-weighted report from `Σ e^{∫_α F} Leb_α(ψ)`.
///
/// Constant potentials use the exact masses of [`weighted_context`]. For height
/// potentials the normalization is fitted so that the mass function has
/// `μ^F_t = 1`; the target column is then the value at the largest `t` and the
/// error column its distance to it (a trend diagnostic; psi ids carry `[fitted]`).
pub fn run_weighted(cfg: &ExperimentConfig, records: &[PerpRecord], table: &LebTable, ctx: &MeasureContext) -> Result<WeightedReport> {
    let f = cfg.potential.clone().ok_or_else(|| LabError::Config("weighted run needs a potential".into()))?;
    let weights: Vec<f64> = records.par_iter().map(|r| Ok(amplitude_along(&r.perp, &f)?.exp())).collect::<Result<_>>()?;
    if f.constant_value().is_some() {
        let gctx = GibbsContext::new(&cfg.group()?, f, cfg.basepoint()?, cfg.t_max())?;
        let wctx = weighted_context(&gctx, ctx)?;
        let c = counting_constant(&wctx, cfg)?;
        let rows = equi_rows(&cfg.t_grid, table, &weights, &targets(table, ctx)?, c, wctx.delta);
        return Ok(WeightedReport { rows, fitted: false, delta_f: wctx.delta, uncertainty: 0.0 });
    }
    let gctx = GibbsContext::new(&cfg.group()?, f, cfg.basepoint()?, cfg.t_max().min(DELTA_F_HORIZON).max(4.0))?;
    let k = table.psis.len() - 1;
    let per_t: Vec<(f64, f64, usize, Vec<f64>)> = cfg
        .t_grid
        .iter()
        .map(|&t| {
            let (n, raw, sums) = weighted_sums(table, &weights, t);
            let mu = sums[..k].iter().map(|s| s / sums[k]).collect();
            (t, n, raw, mu)
        })
        .collect();
    let last = per_t.last().map(|p| p.3.clone()).unwrap_or_default();
    let mut rows = Vec::new();
    for (t, n, raw, mu) in per_t {
        for j in 0..k {
            rows.push(ReportRow {
                t,
                n,
                n_raw: raw,
                n_normalized: n / (gctx.delta_f * t).exp(),
                psi_id: format!("{}[fitted]", psi_id(j, &table.psis[j])),
                mu: mu[j],
                target: last[j],
                rel_err: (mu[j] - last[j]).abs() / last[j].abs(),
                total_mass: 1.0,
            });
        }
    }
    Ok(WeightedReport { rows, fitted: true, delta_f: gctx.delta_f, uncertainty: gctx.uncertainty })
}

pub const DIRECTION_BINS: usize = 36;

/// Angular histograms at the base point of the initial vectors `v_α⁻` and of
/// the reversed terminal vectors `-v_α⁺`, weighted by multiplicity.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionRow {
    pub t: f64,
    pub n: f64,
    pub initial: Vec<f64>,
    pub terminal: Vec<f64>,
    pub tv_initial: f64,
    pub tv_terminal: f64,
}

fn bin_of(angle: f64) -> usize {
    ((angle.rem_euclid(TAU) / TAU * DIRECTION_BINS as f64).floor() as usize).min(DIRECTION_BINS - 1)
}

/// Total-variation distance of a histogram to the uniform distribution.
pub fn tv_to_uniform(h: &[f64]) -> f64 {
    let total: f64 = h.iter().sum();
    let u = 1.0 / h.len() as f64;
    0.5 * h.iter().map(|x| (x / total - u).abs()).sum::<f64>()
}

pub fn run_directions(cfg: &ExperimentConfig, records: &[PerpRecord]) -> Result<Vec<DirectionRow>> {
    let (dm, dp) = cfg.sets()?;
    if !matches!((dm, dp), (ConvexSet::PointSet(_), ConvexSet::PointSet(_))) {
        return Err(LabError::Config("directions need point sets".into()));
    }
    let bins: Vec<(usize, usize)> = records
        .par_iter()
        .map(|r| {
            let u = r.rep_minus.inverse().to_real::<f64>().apply_tangent(r.perp.u);
            let v = r.rep_plus.inverse().to_real::<f64>().apply_tangent(flip(r.perp.v));
            (bin_of(u.angle), bin_of(v.angle))
        })
        .collect();
    Ok(cfg
        .t_grid
        .iter()
        .map(|&t| {
            let mut initial = vec![0.0; DIRECTION_BINS];
            let mut terminal = vec![0.0; DIRECTION_BINS];
            let mut n = 0.0;
            for (r, &(a, b)) in records.iter().zip(&bins) {
                if r.length() <= t {
                    let m = multiplicity(r);
                    initial[a] += m;
                    terminal[b] += m;
                    n += m;
                }
            }
            let (tv_initial, tv_terminal) = if n > 0.0 { (tv_to_uniform(&initial), tv_to_uniform(&terminal)) } else { (f64::NAN, f64::NAN) };
            DirectionRow { t, n, initial, terminal, tv_initial, tv_terminal }
        })
        .collect())
}

/// Least-squares fit of residuals by `a/t + b e^{-κt}` over a grid of `κ`, and
/// whether `t·residual` stays bounded (its linear trend over the grid is small
/// against its mean).
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub a: f64,
    pub b: f64,
    pub kappa: f64,
    pub scaled: Vec<f64>,
    pub bounded: bool,
}

pub fn residual_fit(ts: &[f64], residuals: &[f64]) -> Result<FitSummary> {
    if ts.len() < 4 || ts.len() != residuals.len() {
        return Err(LabError::InsufficientData(format!("{} points, need at least 4", ts.len())));
    }
    let r: Vec<f64> = residuals.iter().map(|x| x.abs()).collect();
    let mut best = (f64::INFINITY, 0.0, 0.0, 0.0);
    for step in 1..=60 {
        let kappa = step as f64 * 0.05;
        let (mut s11, mut s12, mut s22, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &y) in ts.iter().zip(&r) {
            let (p, q) = (1.0 / t, (-kappa * t).exp());
            s11 += p * p;
            s12 += p * q;
            s22 += q * q;
            y1 += p * y;
            y2 += q * y;
        }
        let det = s11 * s22 - s12 * s12;
        if det.abs() < 1e-300 {
            continue;
        }
        let a = (y1 * s22 - y2 * s12) / det;
        let b = (s11 * y2 - s12 * y1) / det;
        let sse: f64 = ts.iter().zip(&r).map(|(&t, &y)| (a / t + b * (-kappa * t).exp() - y).powi(2)).sum();
        if sse < best.0 {
            best = (sse, a, b, kappa);
        }
    }
    let scaled: Vec<f64> = ts.iter().zip(&r).map(|(t, y)| t * y).collect();
    let n = ts.len() as f64;
    let (mt, ms) = (ts.iter().sum::<f64>() / n, scaled.iter().sum::<f64>() / n);
    let cov: f64 = ts.iter().zip(&scaled).map(|(t, s)| (t - mt) * (s - ms)).sum();
    let var: f64 = ts.iter().map(|t| (t - mt).powi(2)).sum();
    let slope = cov / var;
    let span = ts[ts.len() - 1] - ts[0];
    let bounded = (slope * span).abs() <= 0.25 * ms.abs().max(f64::MIN_POSITIVE);
    Ok(FitSummary { a: best.1, b: best.2, kappa: best.3, scaled, bounded })
}

/// Fit of the relative errors of one test function in a report.
pub fn residual_fit_report(rows: &[ReportRow], psi: &str) -> Result<FitSummary> {
    let (ts, rs): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.psi_id == psi).map(|r| (r.t, r.rel_err)).unzip();
    residual_fit(&ts, &rs)
}

/// The file-producing subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Masses,
    Census,
    Count,
    Equi,
    Directions,
    Weighted,
    LoopsSvg,
}

impl Command {
    pub const ALL: [Command; 7] = [Command::Masses, Command::Census, Command::Count, Command::Equi, Command::Directions, Command::Weighted, Command::LoopsSvg];
}

/// Runs one command and returns `(file name, contents)` pairs; nothing is written
/// except the measure cache.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig, cache: Option<&Path>) -> Result<Vec<(String, String)>> {
    let out = &cfg.output;
    Ok(match cmd {
        Command::Masses => vec![(out.masses.clone(), measure_context(cfg, cache)?.to_json())],
        Command::Census => {
            let mut recs = census(cfg)?;
            if let Some(f) = &cfg.potential {
                apply_potential(&mut recs, f)?;
            }
            vec![(out.census.clone(), census_csv(&recs))]
        }
        Command::Count => {
            let recs = census(cfg)?;
            let ctx = measure_context(cfg, cache)?;
            vec![(out.count.clone(), report_csv(&run_count(cfg, &recs, &ctx)?))]
        }
        Command::Equi => {
            let recs = census(cfg)?;
            let ctx = measure_context(cfg, cache)?;
            let table = leb_table(&cfg.group()?, &recs, &cfg.test_functions)?;
            vec![(out.equi.clone(), report_csv(&run_equi(cfg, &table, &ctx)?))]
        }
        Command::Directions => vec![(out.directions.clone(), directions_csv(&run_directions(cfg, &census(cfg)?)?))],
        Command::Weighted => {
            let recs = census(cfg)?;
            let ctx = measure_context(cfg, cache)?;
            let table = leb_table(&cfg.group()?, &recs, &cfg.test_functions)?;
            vec![(out.weighted.clone(), report_csv(&run_weighted(cfg, &recs, &table, &ctx)?.rows))]
        }
        Command::LoopsSvg => vec![(out.svg.clone(), render_loops_svg(cfg, &census(cfg)?, cfg.t_max())?)],
    })
}
