//! Recomputes report columns from the written census and masses, with a reader
//! that shares nothing with the writers.

use std::collections::HashMap;

use perp_lab::lab::{run_command, Command, ExperimentConfig};

const CONFIG: &str = r#"
group = "PSL2Z"
basepoint = [0.0, 2.0]
t_grid = [2.5, 3.5, 4.5, 5.5]
set_minus = { kind = "point", x = 0.1, y = 1.9 }
set_plus = { kind = "horoball", center = inf, size = 1.0 }
potential = { kind = "constant", c = 0.25 }

[quadrature]
x_order = 4
y_order = 4
theta_order = 4
boundary_nodes = 64
"#;

fn table(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = csv.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    (header, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn column<'a>(header: &[String], rows: &'a [Vec<String>], name: &str) -> Vec<&'a str> {
    let k = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k].as_str()).collect()
}

fn ratio(s: &str) -> f64 {
    match s.split_once('/') {
        Some((p, q)) => p.parse::<f64>().unwrap() / q.parse::<f64>().unwrap(),
        None => s.parse().unwrap(),
    }
}

fn output(cfg: &ExperimentConfig, cmd: Command) -> String {
    run_command(cmd, cfg, None).unwrap().pop().unwrap().1
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

#[test]
fn counts_and_weights_from_written_files() {
    let cfg = ExperimentConfig::from_toml(CONFIG).unwrap();
    let census = output(&cfg, Command::Census);
    let masses: serde_json::Value = serde_json::from_str(&output(&cfg, Command::Masses)).unwrap();
    let count = output(&cfg, Command::Count);
    let weighted = output(&cfg, Command::Weighted);

    let (h, rows) = table(&census);
    let lengths: Vec<f64> = column(&h, &rows, "length").iter().map(|s| s.parse().unwrap()).collect();
    let mults: Vec<f64> = column(&h, &rows, "multiplicity").iter().map(|s| ratio(s)).collect();
    let weights: Vec<f64> = column(&h, &rows, "weight").iter().map(|s| s.parse().unwrap()).collect();
    for (l, w) in lengths.iter().zip(&weights) {
        assert!(close(*w, (0.25 * l).exp(), 1e-12), "weight {w} at length {l}");
    }

    let skin: Vec<f64> = masses["skinning_totals"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(skin.len(), 2);
    let bm = masses["bm_total"]["value"].as_f64().unwrap();
    let delta = masses["delta"].as_f64().unwrap();
    let constant = skin[0] * skin[1] / (delta * bm);

    let (h, rows) = table(&count);
    let ts = column(&h, &rows, "t");
    let ns = column(&h, &rows, "N");
    let norm = column(&h, &rows, "N_normalized");
    for k in 0..rows.len() {
        let t: f64 = ts[k].parse().unwrap();
        let n: f64 = lengths.iter().zip(&mults).filter(|(l, _)| **l <= t).map(|(_, m)| m).sum();
        assert!(close(ns[k].parse().unwrap(), n, 1e-12));
        assert!(close(norm[k].parse().unwrap(), n / (constant * (delta * t).exp()), 1e-12), "t = {t}");
    }

    // constant potential: weights e^{cℓ}, exponent δ + c, the same masses
    let (h, rows) = table(&weighted);
    let mut seen = HashMap::new();
    for ((t, n), nn) in column(&h, &rows, "t").into_iter().zip(column(&h, &rows, "N")).zip(column(&h, &rows, "N_normalized")) {
        let t: f64 = t.parse().unwrap();
        let want: f64 = (0..lengths.len()).filter(|&i| lengths[i] <= t).map(|i| mults[i] * weights[i]).sum();
        assert!(close(n.parse().unwrap(), want, 1e-12));
        let growth = skin[0] * skin[1] / ((delta + 0.25) * bm) * ((delta + 0.25) * t).exp();
        assert!(close(nn.parse().unwrap(), want / growth, 1e-12));
        seen.insert(t.to_bits(), ());
    }
    assert_eq!(seen.len(), cfg.t_grid.len());
}
