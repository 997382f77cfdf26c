//! CSV and SVG writers.

use std::fmt::Write;

use super::{DirectionRow, ExperimentConfig, LabError, ReportRow, Result, DIRECTION_BINS};
use crate::convex::ConvexSet;
use crate::hyp2::{MoebiusInt, Point, UnitTangent};
use crate::lattice::{reduce_fd, PerpRecord, Reduction};

/// 17 significant digits; NaN is an empty field.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_ratio(r: &num_rational::Ratio<i64>) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// One row per record; `a,b,c,d` is the translate `rep_plus`.
pub fn census_csv(records: &[PerpRecord]) -> String {
    let mut s = String::from("index,a,b,c,d,length,u_x,u_y,u_angle,v_x,v_y,v_angle,multiplicity,weight\n");
    for (i, r) in records.iter().enumerate() {
        let m = &r.rep_plus;
        let (u, v) = (r.perp.u, r.perp.v);
        let f = fmt_float;
        writeln!(
            s,
            "{i},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            m.a,
            m.b,
            m.c,
            m.d,
            f(r.perp.length),
            f(u.base.x),
            f(u.base.y),
            f(u.angle),
            f(v.base.x),
            f(v.base.y),
            f(v.angle),
            fmt_ratio(&r.multiplicity),
            f(r.weight)
        )
        .expect("string write");
    }
    s
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("t,N,N_normalized,psi_id,mu_t_psi,target_psi,rel_err,total_mass\n");
    for r in rows {
        let f = fmt_float;
        writeln!(s, "{},{},{},{},{},{},{},{}", f(r.t), f(r.n), f(r.n_normalized), r.psi_id, f(r.mu), f(r.target), f(r.rel_err), f(r.total_mass)).expect("string write");
    }
    s
}

pub fn directions_csv(rows: &[DirectionRow]) -> String {
    let mut s = String::from("t,N,tv_initial,tv_terminal,bin,angle_lo,initial,terminal\n");
    let f = fmt_float;
    for r in rows {
        for b in 0..DIRECTION_BINS {
            let lo = std::f64::consts::TAU * b as f64 / DIRECTION_BINS as f64;
            writeln!(s, "{},{},{},{},{b},{},{},{}", f(r.t), f(r.n), f(r.tv_initial), f(r.tv_terminal), f(lo), f(r.initial[b]), f(r.terminal[b])).expect("string write");
        }
    }
    s
}

/// Height drawn at the top edge of the canvas.
pub const SVG_TOP: f64 = 2.25;

/// Canvas map `(x, y) ↦ (400 + 400x, 600 - 400(y - 0.75))`.
pub fn svg_chart(z: Point<f64>) -> (f64, f64) {
    (400.0 + 400.0 * z.x, 600.0 - 400.0 * (z.y - 0.75))
}

/// Hyperbolic step giving about two pixels at height `y`.
fn svg_step(y: f64) -> f64 {
    (2.0 / (400.0 * y)).clamp(1e-4, 0.05)
}

struct Polyline {
    points: Vec<(f64, f64)>,
}

impl Polyline {
    fn write(&self, out: &mut String) {
        if self.points.len() < 2 {
            return;
        }
        out.push_str("<polyline points=\"");
        for (k, (x, y)) in self.points.iter().enumerate() {
            if k > 0 {
                out.push(' ');
            }
            write!(out, "{x:.3},{y:.3}").expect("string write");
        }
        out.push_str("\"/>\n");
    }
}

/// Pieces of one loop in the fundamental domain, split where the reducing element changes.
fn loop_pieces(g: &crate::lattice::LatticeGroup, u: UnitTangent<f64>, len: f64) -> Result<Vec<Polyline>> {
    let frame = u.frame();
    let at = |s: f64| frame.apply_point(Point::on_axis(s.exp()));
    let branch = |s: f64| -> Result<MoebiusInt> { Ok(reduce_fd(g, at(s))?.1) };
    let image = |gamma: &MoebiusInt, s: f64| svg_chart(gamma.inverse().to_real::<f64>().apply_point(at(s)));
    let mut pieces = Vec::new();
    let mut gamma = branch(0.0)?;
    let mut current = Polyline { points: vec![image(&gamma, 0.0)] };
    let mut s = 0.0;
    while s < len {
        let y = gamma.inverse().to_real::<f64>().apply_point(at(s)).y;
        let next = (s + svg_step(y)).min(len);
        let mut lo = s;
        loop {
            let gn = branch(next)?;
            if gn == gamma {
                break;
            }
            // last sample still reduced by `gamma`, first one past the side
            let mut hi = next;
            for _ in 0..50 {
                let m = (lo + hi) / 2.0;
                if branch(m)? == gamma {
                    lo = m;
                } else {
                    hi = m;
                }
            }
            current.points.push(image(&gamma, lo));
            pieces.push(std::mem::replace(&mut current, Polyline { points: Vec::new() }));
            gamma = branch(hi)?;
            current.points.push(image(&gamma, hi));
            lo = hi;
        }
        current.points.push(image(&gamma, next));
        s = next;
    }
    pieces.push(current);
    Ok(pieces.into_iter().filter(|p| p.points.len() >= 2).collect())
}

/// The modular domain and every loop of length at most `t`, in census order.
pub fn render_loops_svg(cfg: &ExperimentConfig, records: &[PerpRecord], t: f64) -> Result<String> {
    let g = cfg.group()?;
    if g.reduction != Some(Reduction::Modular) {
        return Err(LabError::Config("loop figures are drawn in the modular domain (group PSL2Z)".into()));
    }
    let (dm, dp) = cfg.sets()?;
    if !matches!((dm, dp), (ConvexSet::PointSet(_), ConvexSet::PointSet(_))) {
        return Err(LabError::Config("loop figures need point sets".into()));
    }
    let mut out = String::new();
    writeln!(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" viewBox=\"0 0 800 600\">").expect("string write");
    writeln!(out, "<desc>Loops of length at most {} in the modular domain; canvas (400 + 400x, 600 - 400(y - 0.75)).</desc>", fmt_float(t)).expect("string write");
    out.push_str("<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n");
    let corner = svg_chart(Point { x: -0.5, y: 0.75f64.sqrt() });
    let (right, _) = svg_chart(Point { x: 0.5, y: 0.75f64.sqrt() });
    let (_, top) = svg_chart(Point { x: 0.0, y: SVG_TOP });
    writeln!(
        out,
        "<path d=\"M {:.3} {:.3} L {:.3} {:.3} A 400 400 0 0 1 {:.3} {:.3} L {:.3} {:.3}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>",
        corner.0, top, corner.0, corner.1, right, corner.1, right, top
    )
    .expect("string write");
    out.push_str("<g fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"0.8\">\n");
    for r in records.iter().filter(|r| r.length() <= t) {
        let u = r.rep_minus.inverse().to_real::<f64>().apply_tangent(r.perp.u);
        for piece in loop_pieces(&g, u, r.perp.length)? {
            piece.write(&mut out);
        }
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyp2::tangent_towards;
    use crate::lattice::LatticeGroup;

    #[test]
    fn float_format() {
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_float(f64::NAN), "");
        let x = 0.1f64 + 0.2;
        assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn translation_loop_crosses_once() {
        // loop of T at 2i: from 2i to 1 + 2i over the side Re z = 1/2
        let g = LatticeGroup::psl2z();
        let (a, b) = (Point::on_axis(2.0), Point { x: 1.0, y: 2.0 });
        let pieces = loop_pieces(&g, tangent_towards(a, b), crate::hyp2::dist(a, b)).unwrap();
        assert_eq!(pieces.len(), 2);
        let (first_end, second_start) = (pieces[0].points.last().unwrap(), pieces[1].points[0]);
        assert!((first_end.0 - 600.0).abs() < 1e-6, "{first_end:?}");
        assert!((second_start.0 - 200.0).abs() < 1e-6, "{second_start:?}");
        assert!((first_end.1 - second_start.1).abs() < 1e-6);
    }

    #[test]
    fn outline_only_below_shortest_loop() {
        let cfg = crate::lab::tests::loops_config(vec![0.3]);
        let recs = crate::lab::census(&cfg).unwrap();
        assert!(recs.is_empty());
        let svg = render_loops_svg(&cfg, &recs, 0.3).unwrap();
        assert!(!svg.contains("<polyline"));
        assert!(svg.contains("A 400 400 0 0 1"));
    }
}
