//! Acceptance checks shared by `perp-lab selftest` and the test suite.

use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI, TAU};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    census, leb_table, render_loops_svg, run_command, run_count, run_directions, run_equi, run_weighted, Command, ExperimentConfig, LebTable, OutputPaths,
    Result, SetSpec,
};
use crate::convex::{closest_point, common_perp, normal_from_boundary, set_dist, ConvexSet};
use crate::gibbs::{delta_f_estimate, gibbs_cocycle, GibbsContext, Potential};
use crate::hyp2::{busemann, dist, flip, flow, hopf_coords, vector_from_hopf, visual_dist, BoundaryPoint, HopfCoords, Moebius, MoebiusInt, Point, Transform, UnitTangent};
use crate::lattice::{bfs_ball, enumerate_ball, enumerate_translates, perp_census, point_stabilizer, LatticeGroup, PerpRecord, TranslateFamily};
use crate::measures::{bm_density, ps_density, Chart, MeasureContext, PattersonDensity, QuadratureSpec, TestFunction};

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!("{} {:>2} {:<34} {:>7.1}s  {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.name, self.seconds, self.detail)
    }
}

pub const CRITERIA: [(u8, &str); 10] = [
    (1, "geometry exact suite"),
    (2, "enumeration cross-validation"),
    (3, "cusp counting identity"),
    (4, "counting constant closure"),
    (5, "mass consistency"),
    (6, "equidistribution corridor"),
    (7, "direction equidistribution"),
    (8, "constant-potential exactness"),
    (9, "gibbs cocycle checks"),
    (10, "determinism"),
];

/// Runs one criterion; `None` for an unknown id.
pub fn run(id: u8) -> Option<CriterionResult> {
    let (_, name) = *CRITERIA.iter().find(|c| c.0 == id)?;
    let start = Instant::now();
    let outcome = match id {
        1 => geometry(),
        2 => enumeration(),
        3 => cusp_identity(),
        4 => counting_constants(),
        5 => masses(),
        6 => equidistribution(),
        7 => directions(),
        8 => constant_potentials(),
        9 => cocycles(),
        _ => determinism(),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (mut pass, mut detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    if let Some(budget) = budget(id) {
        if seconds > budget {
            pass = false;
            detail = format!("{detail}; over the {budget} s budget");
        }
    }
    Some(CriterionResult { id, name, pass, detail, seconds })
}

pub fn run_all() -> Vec<CriterionResult> {
    CRITERIA.iter().filter_map(|c| run(c.0)).collect()
}

/// Wall-clock budgets. The loops fixture is shared by 4, 6, 7 and 8 and is
/// charged to whichever runs first.
fn budget(id: u8) -> Option<f64> {
    match id {
        1 => Some(5.0),
        2 => Some(30.0),
        3 => Some(120.0),
        4 => Some(600.0),
        _ => None,
    }
}

type Outcome = Result<(bool, String)>;

/// Collects named comparisons.
#[derive(Default)]
struct Checks {
    count: usize,
    failures: Vec<String>,
}

impl Checks {
    fn ok(&mut self, name: &str, cond: bool) {
        self.count += 1;
        if !cond {
            self.failures.push(name.to_string());
        }
    }

    fn close(&mut self, name: &str, got: f64, want: f64, tol: f64) {
        self.count += 1;
        if !((got - want).abs() <= tol) {
            self.failures.push(format!("{name}: {got} vs {want}"));
        }
    }

    fn point(&mut self, name: &str, got: Point<f64>, want: Point<f64>, tol: f64) {
        self.count += 1;
        if !got.approx_eq(&want, tol) {
            self.failures.push(format!("{name}: {got:?} vs {want:?}"));
        }
    }

    fn finish(self) -> (bool, String) {
        if self.failures.is_empty() {
            (true, format!("{} checks", self.count))
        } else {
            (false, format!("{} of {} failed: {}", self.failures.len(), self.count, self.failures.join("; ")))
        }
    }
}

fn p(x: f64, y: f64) -> Point<f64> {
    Point { x, y }
}

fn fin(r: f64) -> BoundaryPoint<f64> {
    BoundaryPoint::Finite(r)
}

const INF: BoundaryPoint<f64> = BoundaryPoint::Infinity;

fn random_point(rng: &mut ChaCha8Rng) -> Point<f64> {
    p(rng.gen_range(-1.5..1.5), rng.gen_range(-1.0f64..1.0).exp())
}

fn random_boundary(rng: &mut ChaCha8Rng) -> BoundaryPoint<f64> {
    if rng.gen_bool(0.1) {
        INF
    } else {
        fin(rng.gen_range(-2.0..2.0))
    }
}

/// A word of length at most 6 in `S`, `T` and `T⁻¹`.
fn random_element(rng: &mut ChaCha8Rng) -> MoebiusInt {
    let gens = [MoebiusInt::S, MoebiusInt::T, MoebiusInt::T.inverse()];
    let mut g = MoebiusInt::IDENTITY;
    for _ in 0..rng.gen_range(1..=6) {
        g = g.compose(&gens[rng.gen_range(0..3)]).expect("short words stay small");
    }
    g
}

fn tangent_close(a: UnitTangent<f64>, b: UnitTangent<f64>, tol: f64) -> bool {
    a.approx_eq(&b, tol)
}

// ---------------------------------------------------------------------------
// 1

fn geometry() -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let i = Point::i();
    let tol = 1e-10;

    c.close("dist(i, 4i)", dist(i, p(0.0, 4.0)), 4f64.ln(), tol);
    c.close("dist(i, 1+i)", dist(i, p(1.0, 1.0)), 1.5f64.acosh(), 1e-9);
    // a fine polygonal path along the geodesic arc |z - 1/2|² = 5/4 bounds the distance from above
    let arc_len = {
        let (cx, r) = (0.5, 1.25f64.sqrt());
        let (a0, a1) = ((1.0f64).atan2(-0.5), (1.0f64).atan2(0.5));
        let n = 200_000;
        let pt = |k: usize| {
            let a = a0 + (a1 - a0) * k as f64 / n as f64;
            p(cx + r * a.cos(), r * a.sin())
        };
        (0..n).map(|k| dist(pt(k), pt(k + 1))).sum::<f64>()
    };
    c.close("dist(i, 1+i) polygonal oracle", arc_len, 1.5f64.acosh(), 1e-9);
    for _ in 0..50 {
        let (a, b, g) = (random_point(&mut rng), random_point(&mut rng), random_element(&mut rng).to_real::<f64>());
        c.close("isometry invariance", dist(g.apply_point(a), g.apply_point(b)), dist(a, b), tol);
        let xi = random_boundary(&mut rng);
        c.close("busemann at equal points", busemann(xi, a, a), 0.0, tol);
    }

    c.close("busemann(∞, i, 2i)", busemann(INF, i, p(0.0, 2.0)), LN_2, 1e-9);
    c.close("busemann(0, i, i/2)", busemann(fin(0.0), i, p(0.0, 0.5)), LN_2, 1e-9);
    c.close("busemann(0, i, 2i)", busemann(fin(0.0), i, p(0.0, 2.0)), -LN_2, 1e-9);
    let far = p(0.0, 1e6);
    c.close("busemann(∞) limit oracle", dist(far, i) - dist(far, p(0.0, 2.0)), busemann(INF, i, p(0.0, 2.0)), 1e-6);
    let far0 = p(0.0, 1e-6);
    c.close("busemann(0) limit oracle", dist(far0, i) - dist(far0, p(0.0, 0.5)), busemann(fin(0.0), i, p(0.0, 0.5)), 1e-6);

    c.close("visual_dist(i; 0, ∞)", visual_dist(i, fin(0.0), INF)?, 1.0, tol);
    c.close("visual_dist(i; -1, 1)", visual_dist(i, fin(-1.0), fin(1.0))?, 1.0, tol);
    c.close("visual_dist(i; 1, ∞)", visual_dist(i, fin(1.0), INF)?, std::f64::consts::FRAC_1_SQRT_2, 1e-9);
    // closest point on Re z = 1 to i, by golden-section search on the height
    let y_star = golden_min(|y| dist(i, p(1.0, y)), 0.1, 10.0);
    let yp = p(1.0, y_star);
    let visual_oracle = (-(busemann(fin(1.0), i, yp) + busemann(INF, i, yp)) / 2.0).exp();
    c.close("visual_dist oracle", visual_oracle, std::f64::consts::FRAC_1_SQRT_2, 1e-9);

    let up = UnitTangent::upward(i);
    let down = UnitTangent::downward(i);
    let h = hopf_coords(up, i);
    c.ok("hopf(up at i)", h.vminus.approx_eq(&fin(0.0), tol) && h.vplus.is_infinite() && h.s.abs() <= tol);
    let h = hopf_coords(down, i);
    c.ok("hopf(down at i)", h.vminus.is_infinite() && h.vplus.approx_eq(&fin(0.0), tol) && h.s.abs() <= tol);
    let h = hopf_coords(UnitTangent::upward(p(0.0, 2.0)), i);
    c.close("hopf(up at 2i).s", h.s, LN_2, 1e-9);
    c.close("hopf(up at 2i) vs flowed base case", h.s, hopf_coords(flow(up, LN_2), i).s, 1e-9);
    let hc = |vm, vp, s| HopfCoords { vminus: vm, vplus: vp, s, basepoint: i };
    c.ok("from_hopf(0, ∞, 0)", tangent_close(vector_from_hopf(hc(fin(0.0), INF, 0.0))?, up, tol));
    c.ok("from_hopf(0, ∞, t)", tangent_close(vector_from_hopf(hc(fin(0.0), INF, 0.7))?, UnitTangent::upward(p(0.0, 0.7f64.exp())), tol));
    let w = vector_from_hopf(hc(fin(-1.0), fin(1.0), 0.0))?;
    c.ok("from_hopf(-1, 1, 0)", tangent_close(w, UnitTangent::new(i, 0.0), 1e-9));
    c.ok("from_hopf round trip", hopf_coords(w, i).approx_eq(&hc(fin(-1.0), fin(1.0), 0.0), 1e-9));

    c.ok("flow(up at i, ln 3)", tangent_close(flow(up, 3f64.ln()), UnitTangent::upward(p(0.0, 3.0)), tol));
    for _ in 0..50 {
        let v = UnitTangent::new(random_point(&mut rng), rng.gen_range(0.0..TAU));
        let (s, t) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        c.ok("flow(v, 0)", tangent_close(flow(v, 0.0), v, tol));
        c.ok("flow property", tangent_close(flow(flow(v, s), t), flow(v, s + t), tol));
        c.ok("flip involution", tangent_close(flip(flip(v)), v, tol));
        let (hv, hf) = (hopf_coords(v, i), hopf_coords(flip(v), i));
        c.ok("hopf(flip v)", hf.vminus.approx_eq(&hv.vplus, 1e-9) && hf.vplus.approx_eq(&hv.vminus, 1e-9) && (hf.s + hv.s).abs() <= 1e-9);
    }
    c.ok("flip(up at i)", tangent_close(flip(up), down, tol));

    c.point("T·i", MoebiusInt::T.to_real::<f64>().apply_point(i), p(1.0, 1.0), tol);
    c.point("S·2i", MoebiusInt::S.to_real::<f64>().apply_point(p(0.0, 2.0)), p(0.0, 0.5), tol);
    c.ok("S on up at i", tangent_close(MoebiusInt::S.to_real::<f64>().apply_tangent(up), down, 1e-9));
    // finite-difference oracle: S maps the curve i + εi to points below i
    let eps = 1e-6;
    let image = MoebiusInt::S.to_real::<f64>().apply_point(p(0.0, 1.0 + eps));
    let fd_angle = (image.y - 1.0).atan2(image.x);
    c.close("S tangent by finite difference", fd_angle.rem_euclid(TAU), down.angle, 1e-5);

    let axis = ConvexSet::geodesic(fin(0.0), INF)?;
    let geo13 = ConvexSet::geodesic(fin(1.0), fin(3.0))?;
    let h_inf1 = ConvexSet::horoball(INF, 1.0)?;
    let h_inf2 = ConvexSet::horoball(INF, 2.0)?;
    c.close("dist(Point(1+i), H(∞, 2))", set_dist(&ConvexSet::PointSet(p(1.0, 1.0)), &h_inf2), LN_2, tol);
    c.close("dist(Point(2i), axis)", set_dist(&ConvexSet::PointSet(p(0.0, 2.0)), &axis), 0.0, tol);
    c.close("dist(axis, ]1, 3[)", set_dist(&axis, &geo13), (2.0 + 3f64.sqrt()).ln(), 1e-9);
    let oracle = golden_min(|y| geodesic_point_dist(p(0.0, y), 1.0, 3.0), 0.5, 5.0);
    c.close("dist(axis, ]1, 3[) minimization", geodesic_point_dist(p(0.0, oracle), 1.0, 3.0), (2.0 + 3f64.sqrt()).ln(), 1e-9);
    c.point("closest(H(∞, 2), i)", closest_point(&h_inf2, i), p(0.0, 2.0), tol);
    c.point("closest(A, p), p ∈ A", closest_point(&axis, p(0.0, 3.0)), p(0.0, 3.0), tol);
    c.point("closest(axis, 1+i)", closest_point(&axis, p(1.0, 1.0)), p(0.0, 2f64.sqrt()), 1e-9);
    let cp = common_perp(&axis, &geo13)?;
    c.point("perp foot on axis", cp.u.base, p(0.0, 3f64.sqrt()), 1e-9);
    c.point("perp foot on ]1, 3[", cp.v.base, p(1.5, 3f64.sqrt() / 2.0), 1e-9);
    c.close("perp length", cp.length, (2.0 + 3f64.sqrt()).ln(), 1e-9);
    let cp = common_perp(&h_inf1, &ConvexSet::horoball(fin(0.5), 0.25)?)?;
    c.point("horoball perp start", cp.u.base, p(0.5, 1.0), 1e-9);
    c.point("horoball perp end", cp.v.base, p(0.5, 0.25), 1e-9);
    c.close("horoball perp length", cp.length, 2.0 * LN_2, 1e-9);
    for _ in 0..20 {
        let g: Moebius<f64> = random_element(&mut rng).to_real();
        let (a, b) = (ConvexSet::PointSet(random_point(&mut rng)), ConvexSet::geodesic(fin(2.5), fin(4.0))?);
        let moved = common_perp(&image_set(&g, &a), &image_set(&g, &b))?;
        c.ok("perp equivariance", common_perp(&a, &b)?.transform(&g).approx_eq(&moved, 1e-8));
    }
    c.ok("normal(Point(i), ∞)", tangent_close(normal_from_boundary(&ConvexSet::PointSet(i), INF)?, up, tol));
    c.ok("normal(H(∞, 1), 0)", tangent_close(normal_from_boundary(&h_inf1, fin(0.0))?, down, tol));
    c.ok("normal(axis, 1)", tangent_close(normal_from_boundary(&axis, fin(1.0))?, UnitTangent::new(i, 0.0), 1e-9));

    let g = LatticeGroup::psl2z();
    let base = p(0.0, 2.0);
    c.ok("stabilizer of 2i", point_stabilizer(&g, base)? == vec![MoebiusInt::IDENTITY]);
    let ball = enumerate_ball(&g, base, 5.0)?;
    let set: std::collections::BTreeSet<MoebiusInt> = ball.iter().copied().collect();
    c.ok("ball closed under inverse", ball.iter().all(|m| set.contains(&m.inverse())));
    c.ok("bfs at t = 0", bfs_ball(&g, base, 0.0)? == enumerate_ball(&g, base, 0.0)?);
    let fam = enumerate_translates(&g, &ConvexSet::PointSet(base), base, 0.0)?;
    c.ok("translates at t = 0", fam.len() == 1 && fam.reps[0].0 == MoebiusInt::IDENTITY);
    let mut fam = TranslateFamily { base_set: h_inf1, reps: vec![(MoebiusInt::IDENTITY, h_inf1), (MoebiusInt::T, image_set(&MoebiusInt::T.to_real(), &h_inf1))] };
    fam.dedup();
    c.ok("dedup of the T-orbit", fam.len() == 1);
    let loops = perp_census(&g, &ConvexSet::PointSet(base), &ConvexSet::PointSet(base), 6.0)?;
    c.ok("loops = ball - 1", loops.len() + 1 == enumerate_ball(&g, base, 6.0)?.len());
    Ok(c.finish())
}

fn image_set(g: &Moebius<f64>, a: &ConvexSet<f64>) -> ConvexSet<f64> {
    a.transform(g)
}

/// Distance from `z` to the geodesic `]a, b[`, minimizing over a fine parametrization.
fn geodesic_point_dist(z: Point<f64>, a: f64, b: f64) -> f64 {
    let (cx, r) = ((a + b) / 2.0, (b - a) / 2.0);
    let t = golden_min(|t| dist(z, p(cx + r * t.cos(), r * t.sin())), 1e-6, PI - 1e-6);
    dist(z, p(cx + r * t.cos(), r * t.sin()))
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - g * (b - a), a + g * (b - a));
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    (a + b) / 2.0
}

// ---------------------------------------------------------------------------
// 2

fn enumeration() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for g in [LatticeGroup::psl2z(), LatticeGroup::gamma2()] {
        let mut a = enumerate_ball(&g, p(0.0, 2.0), 6.0)?;
        let mut b = bfs_ball(&g, p(0.0, 2.0), 6.0)?;
        a.sort();
        b.sort();
        pass &= a == b;
        parts.push(format!("{}: {} vs {}", g.name, a.len(), b.len()));
    }
    Ok((pass, parts.join(", ")))
}

// ---------------------------------------------------------------------------
// 3 and 4: cusp census

fn cusp_config(t: f64) -> ExperimentConfig {
    ExperimentConfig {
        group: "PSL2Z".into(),
        set_minus: SetSpec::Horoball { center: f64::INFINITY, size: 1.0 },
        set_plus: SetSpec::Horoball { center: f64::INFINITY, size: 1.0 },
        basepoint: [0.0, 2.0],
        t_grid: vec![t],
        potential: None,
        test_functions: TestFunction::builtins(),
        quadrature: QuadratureSpec::default(),
        seed: 0,
        output: OutputPaths::default(),
        threads: 0,
    }
}

fn totients(n: usize) -> Vec<u64> {
    let mut phi: Vec<u64> = (0..=n as u64).collect();
    for k in 2..=n {
        if phi[k] == k as u64 {
            for m in (k..=n).step_by(k) {
                phi[m] -= phi[m] / k as u64;
            }
        }
    }
    phi
}

fn cusp_identity() -> Outcome {
    const X: usize = 1000;
    let t = 2.0 * (X as f64).ln();
    let recs = census(&cusp_config(t + 1e-9))?;
    let phi = totients(X);
    let mut per_c: BTreeMap<u64, u64> = BTreeMap::new();
    let mut worst: f64 = 0.0;
    for r in &recs {
        let c = (r.length() / 2.0).exp().round();
        worst = worst.max((r.length() - 2.0 * c.ln()).abs());
        *per_c.entry(c as u64).or_default() += 1;
    }
    let expected: BTreeMap<u64, u64> = (2..=X as u64).map(|c| (c, phi[c as usize])).collect();
    let total: u64 = expected.values().sum();
    let counts_ok = per_c == expected;
    let ratio = recs.len() as f64 * (-t).exp() / (3.0 / (PI * PI));
    let pass = counts_ok && worst <= 1e-12 && recs.len() as u64 == total && (0.98..=1.02).contains(&ratio);
    Ok((pass, format!("N = {} (Σφ = {total}), per-c counts {}, max |ℓ - 2 ln c| = {worst:.1e}, ratio {ratio:.5}", recs.len(), if counts_ok { "match" } else { "differ" })))
}

/// Loops at `2i` up to `t = 12` with their integrals, shared by 4, 6, 7 and 8.
struct LoopsFixture {
    cfg: ExperimentConfig,
    records: Vec<PerpRecord>,
    ctx: MeasureContext,
    table: LebTable,
}

pub(super) fn loops_at_2i(t_grid: Vec<f64>, quadrature: QuadratureSpec) -> ExperimentConfig {
    ExperimentConfig {
        group: "PSL2Z".into(),
        set_minus: SetSpec::Point { x: 0.0, y: 2.0 },
        set_plus: SetSpec::Point { x: 0.0, y: 2.0 },
        basepoint: [0.0, 2.0],
        t_grid,
        potential: None,
        test_functions: TestFunction::builtins(),
        quadrature,
        seed: 0,
        output: OutputPaths::default(),
        threads: 0,
    }
}

fn loops_fixture() -> std::result::Result<&'static LoopsFixture, String> {
    static FIXTURE: OnceLock<std::result::Result<LoopsFixture, String>> = OnceLock::new();
    FIXTURE
        .get_or_init(|| {
            let build = || -> Result<LoopsFixture> {
                let cfg = loops_at_2i(vec![8.0, 9.0, 10.0, 11.0, 12.0], QuadratureSpec::default());
                let records = census(&cfg)?;
                let ctx = super::measure_context(&cfg, None)?;
                let table = leb_table(&cfg.group()?, &records, &cfg.test_functions)?;
                Ok(LoopsFixture { cfg, records, ctx, table })
            };
            build().map_err(|e| e.to_string())
        })
        .as_ref()
        .map_err(|e| e.clone())
}

fn fixture() -> Result<&'static LoopsFixture> {
    loops_fixture().map_err(super::LabError::InsufficientData)
}

fn counting_constants() -> Outcome {
    let cfg = cusp_config(1.0);
    let (dm, dp) = cfg.sets()?;
    let ctx = MeasureContext::build(&cfg.group()?, cfg.quadrature, &[dm, dp])?;
    let c = ctx.counting_constant(&dm, &dp).unwrap_or(f64::NAN);
    let cusp_rel = (c / (3.0 / (PI * PI)) - 1.0).abs();

    let fx = fixture()?;
    let rows = run_count(&fx.cfg, &fx.records, &fx.ctx)?;
    let at = |t: f64| rows.iter().find(|r| r.t == t).map(|r| r.n_normalized).unwrap_or(f64::NAN);
    let (r8, r12) = (at(8.0), at(12.0));
    let loops_const = TAU * TAU / fx.ctx.bm_total.value;
    let pass = cusp_rel <= 0.02 && (r12 - 1.0).abs() <= 0.2 && (r12 - 1.0).abs() < (r8 - 1.0).abs();
    Ok((
        pass,
        format!("cusp constant {c:.6} vs 3/π² (rel {cusp_rel:.1e}); loops N(t)e^-t/{loops_const:.5}: t=8 {r8:.4}, t=12 {r12:.4}"),
    ))
}

// ---------------------------------------------------------------------------
// 5

fn masses() -> Outcome {
    let spec = QuadratureSpec::default();
    let m1 = MeasureContext::build(&LatticeGroup::psl2z(), spec, &[])?.bm_total.value;
    let m6 = MeasureContext::build(&LatticeGroup::gamma2(), spec, &[])?.bm_total.value;
    let ratio = m6 / m1;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut conformal, mut basepoint) = (0.0f64, 0.0f64);
    let dens = PattersonDensity::default();
    let mut n = 0;
    while n < 1000 {
        let (x, y, xi) = (random_point(&mut rng), random_point(&mut rng), random_boundary(&mut rng));
        let lhs = ps_density(x, xi) / ps_density(y, xi);
        conformal = conformal.max((lhs / (-busemann(xi, x, y)).exp() - 1.0).abs());

        let v = UnitTangent::new(random_point(&mut rng), rng.gen_range(0.0..TAU));
        let full = |base: Point<f64>| -> Result<f64> {
            let h = hopf_coords(v, base);
            let ch = Chart::Finite;
            Ok(bm_density(&h)? * dens.in_chart(base, ch, ch.coordinate(h.vminus)) * dens.in_chart(base, ch, ch.coordinate(h.vplus)))
        };
        let h = hopf_coords(v, Point::i());
        if h.vminus.is_infinite() || h.vplus.is_infinite() {
            continue;
        }
        basepoint = basepoint.max((full(Point::i())? / full(p(0.0, 2.0))? - 1.0).abs());
        n += 1;
    }
    let pass = (ratio / 6.0 - 1.0).abs() <= 0.005 && conformal <= 1e-9 && basepoint <= 1e-9;
    Ok((pass, format!("ratio {ratio:.6}, conformal max rel {conformal:.1e}, basepoint max rel {basepoint:.1e} on {n} samples")))
}

// ---------------------------------------------------------------------------
// 6 and 7

fn equidistribution() -> Outcome {
    let fx = fixture()?;
    let rows = run_equi(&fx.cfg, &fx.table, &fx.ctx)?;
    let get = |t: f64, id: &str| rows.iter().find(|r| r.t == t && r.psi_id == id);
    let mut good = 0;
    let mut parts = Vec::new();
    let ids: Vec<String> = rows.iter().filter(|r| r.t == 12.0).map(|r| r.psi_id.clone()).collect();
    for id in &ids {
        let (Some(a), Some(b)) = (get(9.0, id), get(12.0, id)) else { continue };
        let ok = b.rel_err <= 0.2 && b.rel_err < a.rel_err;
        good += ok as usize;
        parts.push(format!("{id}: {:.3} -> {:.3}", a.rel_err, b.rel_err));
    }
    let mass = |t: f64| rows.iter().find(|r| r.t == t).map(|r| r.total_mass).unwrap_or(f64::NAN);
    let (m9, m12) = (mass(9.0), mass(12.0));
    let mass_ok = (0.8..=1.1).contains(&m12) && (m12 - 1.0).abs() < (m9 - 1.0).abs();
    Ok((good >= 3 && mass_ok, format!("rel err t=9 -> 12: {}; {good} pass; mass {m9:.4} -> {m12:.4}", parts.join(", "))))
}

fn directions() -> Outcome {
    let fx = fixture()?;
    let rows = run_directions(&fx.cfg, &fx.records)?;
    let at = |t: f64| rows.iter().find(|r| r.t == t).map(|r| (r.tv_initial, r.tv_terminal)).unwrap_or((f64::NAN, f64::NAN));
    let (a, b) = (at(9.0), at(12.0));
    let pass = b.0 < 0.05 && b.1 < 0.05 && b.0 < a.0 && b.1 < a.1;
    Ok((pass, format!("TV initial {:.4} -> {:.4}, terminal {:.4} -> {:.4}", a.0, b.0, a.1, b.1)))
}

// ---------------------------------------------------------------------------
// 8

fn constant_potentials() -> Outcome {
    let fx = fixture()?;
    let equi = run_equi(&fx.cfg, &fx.table, &fx.ctx)?;
    let mut zero = fx.cfg.clone();
    zero.potential = Some(Potential::constant(0.0));
    let w0 = run_weighted(&zero, &fx.records, &fx.table, &fx.ctx)?;
    let bitwise = w0.rows.len() == equi.rows_len() && w0.rows.iter().zip(&equi).all(|(a, b)| same_row_bits(a, b));

    let c = 0.3;
    let mut cfg = fx.cfg.clone();
    cfg.potential = Some(Potential::constant(c));
    let w = run_weighted(&cfg, &fx.records, &fx.table, &fx.ctx)?;
    // reweight the unweighted table: δ_F = δ + c and the same masses
    let (dm, dp) = fx.cfg.sets()?;
    let delta_f = fx.ctx.delta + c;
    let count_const = fx.ctx.skinning_total(&dm).unwrap_or(f64::NAN) * fx.ctx.skinning_total(&dp).unwrap_or(f64::NAN) / (delta_f * fx.ctx.bm_total.value);
    let k = fx.table.psis.len() - 1;
    let mut worst: f64 = 0.0;
    let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / b.abs().max(1e-300) };
    for row in &w.rows {
        let j: usize = row.psi_id.split(':').next().and_then(|s| s.parse().ok()).unwrap_or(usize::MAX);
        if j >= k {
            worst = f64::INFINITY;
            continue;
        }
        let (mut n, mut s, mut mass) = (0.0, 0.0, 0.0);
        for i in 0..fx.table.lengths.len() {
            let l = fx.table.lengths[i];
            if l <= row.t {
                let wt = fx.table.multiplicities[i] * (c * l).exp();
                n += wt;
                s += wt * fx.table.values[i][j];
                mass += wt * fx.table.values[i][k];
            }
        }
        let growth = count_const * (delta_f * row.t).exp();
        for (got, want) in [(row.n, n), (row.n_normalized, n / growth), (row.mu, s / (row.t * growth)), (row.total_mass, mass / (row.t * growth))] {
            worst = worst.max(rel(got, want));
        }
    }

    let g = fx.cfg.group()?;
    let x0 = fx.cfg.basepoint()?;
    let e0 = delta_f_estimate(&g, &Potential::constant(0.0), x0, 12.0)?;
    let e3 = delta_f_estimate(&g, &Potential::constant(c), x0, 12.0)?;
    let shift = e3.estimate - e0.estimate;
    let ratio_shift = e3.log_ratio - e0.log_ratio;
    let bound = c / 12.0;
    let pass = bitwise && worst <= 1e-12 && (shift - c).abs() <= bound && (ratio_shift - c).abs() <= bound;
    Ok((pass, format!("F=0 bitwise {bitwise}; F=0.3 max rel dev {worst:.1e}; δ_F shift {shift:.4} (log-ratio {ratio_shift:.4}), bound |shift - 0.3| ≤ {bound:.4}")))
}

trait RowsLen {
    fn rows_len(&self) -> usize;
}

impl RowsLen for Vec<super::ReportRow> {
    fn rows_len(&self) -> usize {
        self.len()
    }
}

fn same_row_bits(a: &super::ReportRow, b: &super::ReportRow) -> bool {
    let bits = |r: &super::ReportRow| [r.t, r.n, r.n_normalized, r.mu, r.target, r.rel_err, r.total_mass].map(f64::to_bits);
    bits(a) == bits(b) && a.n_raw == b.n_raw && a.psi_id == b.psi_id
}

// ---------------------------------------------------------------------------
// 9

fn cocycles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut exact: f64 = 0.0;
    for c in [0.0, 0.3, -0.2] {
        let ctx = GibbsContext::constant(c);
        for _ in 0..200 {
            let (x, y, xi) = (random_point(&mut rng), random_point(&mut rng), random_boundary(&mut rng));
            exact = exact.max((gibbs_cocycle(xi, x, y, &ctx)? - busemann(xi, x, y)).abs());
        }
    }
    let g = LatticeGroup::psl2z();
    let ctx = GibbsContext::new(&g, Potential::height_band(0.4, 0.5, 0.6), p(0.0, 2.0), 8.0)?;
    let (mut additive, mut equivariant): (f64, f64) = (0.0, 0.0);
    for _ in 0..500 {
        let (x, y, z) = (random_point(&mut rng), random_point(&mut rng), random_point(&mut rng));
        let xi = random_boundary(&mut rng);
        let cxy = gibbs_cocycle(xi, x, y, &ctx)?;
        let cyz = gibbs_cocycle(xi, y, z, &ctx)?;
        let cxz = gibbs_cocycle(xi, x, z, &ctx)?;
        additive = additive.max((cxz - cxy - cyz).abs());
        let m: Moebius<f64> = random_element(&mut rng).to_real();
        let moved = gibbs_cocycle(m.apply_boundary(xi), m.apply_point(x), m.apply_point(y), &ctx)?;
        equivariant = equivariant.max((moved - cxy).abs());
    }
    let pass = exact <= 1e-12 && additive <= 1e-8 && equivariant <= 1e-8;
    Ok((pass, format!("constant vs busemann {exact:.1e}; height band (δ_F {:.4}): additivity {additive:.1e}, equivariance {equivariant:.1e}", ctx.delta_f)))
}

// ---------------------------------------------------------------------------
// 10

/// A small configuration exercising every command.
pub(super) fn determinism_config() -> ExperimentConfig {
    let mut cfg = loops_at_2i(vec![3.0, 4.0, 5.0, 6.0], QuadratureSpec::default().coarse());
    cfg.potential = Some(Potential::height_band(0.3, 0.5, 0.6));
    cfg
}

fn outputs_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<(String, String)>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| super::LabError::Config(e.to_string()))?;
    pool.install(|| {
        let mut all = Vec::new();
        for cmd in Command::ALL {
            all.extend(run_command(cmd, cfg, None)?);
        }
        Ok(all)
    })
}

fn determinism() -> Outcome {
    let cfg = determinism_config();
    let one = outputs_with_threads(&cfg, 1)?;
    let many = outputs_with_threads(&cfg, 4)?;
    let differing: Vec<&str> = one.iter().zip(&many).filter(|(a, b)| a != b).map(|(a, _)| a.0.as_str()).collect();
    let figure = loops_at_2i(vec![4.0], QuadratureSpec::default().coarse());
    let recs = census(&figure)?;
    let svg_a = render_loops_svg(&figure, &recs, 4.0)?;
    let svg_b = render_loops_svg(&figure, &census(&figure)?, 4.0)?;
    let pass = one.len() == many.len() && differing.is_empty() && svg_a == svg_b;
    Ok((
        pass,
        format!("{} files identical across 1 and 4 threads{}; figure svg {} bytes, {} loops, stable {}", one.len(), if differing.is_empty() { String::new() } else { format!(" except {differing:?}") }, svg_a.len(), recs.len(), svg_a == svg_b),
    ))
}
