//! End-to-end runs of the `perp-lab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
group = "PSL2Z"
basepoint = [0.0, 2.0]
t_grid = [3.0, 4.0, 5.0]
set_minus = { kind = "point", x = 0.0, y = 2.0 }
set_plus = { kind = "point", x = 0.0, y = 2.0 }
potential = { kind = "height_band", amplitude = 0.3, center = 0.5, width = 0.6 }

[quadrature]
x_order = 4
y_order = 4
theta_order = 4
boundary_nodes = 64
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_perp-lab"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    for cmd in ["masses", "census", "count", "equi", "directions", "weighted", "loops-svg"] {
        let mut outs = Vec::new();
        for threads in ["1", "3"] {
            let out = dir.path().join(format!("{cmd}-{threads}"));
            let o = run(&[cmd, "--config", cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
            assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
                })
                .collect();
            files.sort();
            assert_eq!(files.len(), 1, "{cmd}");
            outs.push(files);
        }
        assert!(outs[0] == outs[1], "{cmd} differs between thread counts");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&run(&["count", "--config", missing.to_str().unwrap()])), 1);
    assert_eq!(code(&run(&["count"])), 1);
    assert_eq!(code(&run(&["bogus"])), 1);
    let bad = write_config(dir.path(), "bad.toml", "group = \"SL3Z\"\nt_grid = [1.0]\nset_minus = { kind = \"point\", x = 0.0, y = 2.0 }\nset_plus = { kind = \"point\", x = 0.0, y = 2.0 }\n");
    assert_eq!(code(&run(&["count", "--config", bad.to_str().unwrap()])), 1);
    let o = run(&["count", "--config", bad.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("SL3Z"));
}

#[test]
fn oversized_runs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let o = run(&["census", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--t-max", "30"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn cusp_census_up_to_two_log_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cusp.toml",
        "group = \"PSL2Z\"\nt_grid = [1.0]\nset_minus = { kind = \"horoball\", center = inf, size = 1.0 }\nset_plus = { kind = \"horoball\", center = inf, size = 1.0 }\n",
    );
    let t = format!("{}", 2.0 * 3f64.ln() + 1e-12);
    let o = run(&["census", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--t-max", &t]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("census.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "index,a,b,c,d,length,u_x,u_y,u_angle,v_x,v_y,v_angle,multiplicity,weight");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    // tangent points 1/2, 1/3, 2/3
    let mut cusps: Vec<(i64, i64)> = rows.iter().map(|r| (r[1].parse().unwrap(), r[3].parse().unwrap())).collect();
    cusps.iter_mut().for_each(|(a, c)| {
        if *c < 0 {
            *a = -*a;
            *c = -*c;
        }
        *a = a.rem_euclid(*c);
    });
    cusps.sort();
    assert_eq!(cusps, vec![(1, 2), (1, 3), (2, 3)]);
    for r in &rows {
        let c: f64 = r[3].parse::<f64>().unwrap().abs();
        let len: f64 = r[5].parse().unwrap();
        assert!((len - 2.0 * c.ln()).abs() < 1e-12);
    }
}

#[test]
fn cache_is_reused_and_t_max_cuts_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (cfg, out) = (cfg.to_str().unwrap(), dir.path().to_str().unwrap());
    let cache = dir.path().join("cache/ctx.json");
    let cache = cache.to_str().unwrap();
    assert_eq!(code(&run(&["masses", "--config", cfg, "--out", out, "--cache", cache])), 0);
    let first = std::fs::read(cache).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("masses.json")).unwrap());
    assert_eq!(code(&run(&["count", "--config", cfg, "--out", out, "--cache", cache, "--t-max", "4.5"])), 0);
    assert_eq!(std::fs::read(cache).unwrap(), first);
    let count = std::fs::read_to_string(dir.path().join("count.csv")).unwrap();
    let ts: Vec<f64> = count.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ts, vec![3.0, 4.0, 4.5]);
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.extension().is_some_and(|x| x == "toml") {
            perp_lab::lab::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
