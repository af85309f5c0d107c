use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fracising(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracising"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const MINIMAL: &str = r#"
mode = "classical_1d"
seed = 11

[couplings]
q = [1.0]

[lattice]
sizes = [16]

[[scan]]
values = [0.5, 0.8, 1.1]

[engine]
n_equil = 50
n_measure = 200
"#;

const CHAIN_Q2: &str = r#"
mode = "classical_1d"
seed = 3

[couplings]
q = [2.0]

[lattice]
sizes = [16, 32, 64]

[[scan]]
start = 0.4
stop = 1.6
count = 7

[engine]
n_equil = 200
n_measure = 2000
"#;

fn record_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_str().unwrap();
            name.ends_with(".csv") && !name.ends_with(".corr.csv")
        })
        .collect();
    files.sort();
    files
}

fn read_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

#[test]
fn couplings_momentum_curve_peaks_at_four_for_nearest_neighbours() {
    let tmp = TempDir::new().unwrap();
    let out = fracising(&["couplings", "--q", "2", "--r-max", "50", "--out", path_arg(tmp.path())]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_rows(&tmp.path().join("momentum_q2.csv"));
    let (k, max) = rows
        .iter()
        .map(|r| (r[0], r[1]))
        .fold((0.0, f64::MIN), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    assert!((max - 4.0).abs() < 1e-12, "max {max}");
    assert!((k.abs() - std::f64::consts::PI).abs() < 1e-12, "at k = {k}");
}

#[test]
fn couplings_tables_decay_with_exponent_one_plus_q() {
    let tmp = TempDir::new().unwrap();
    let out = fracising(&[
        "couplings", "--q", "0.2", "--q", "0.5", "--q", "0.8", "--r-max", "10000", "--size", "64", "--out",
        path_arg(tmp.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for q in [0.2, 0.5, 0.8] {
        let rows = read_rows(&tmp.path().join(format!("couplings_q{q}.csv")));
        assert_eq!(rows.len(), 10_000);
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r[0] >= 100.0)
            .map(|r| (r[0].ln(), r[1].ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((slope + 1.0 + q).abs() < 0.01 * (1.0 + q), "q = {q}: slope {slope}");
        // The image-summed column is filled up to L/2 only.
        assert!(!rows[31][2].is_nan() && rows[32][2].is_nan());
    }
    let slopes = fs::read_to_string(tmp.path().join("slopes.csv")).unwrap();
    assert_eq!(slopes.lines().count(), 4);
}

#[test]
fn couplings_rejects_zero_range() {
    let tmp = TempDir::new().unwrap();
    let out = fracising(&["couplings", "--q", "1", "--r-max", "0", "--out", path_arg(tmp.path())]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn couplings_rejects_invalid_order() {
    let tmp = TempDir::new().unwrap();
    let out = fracising(&["couplings", "--q", "-1", "--out", path_arg(tmp.path())]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn run_writes_one_record_per_grid_point_and_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = fracising(&["run", "--config", path_arg(&cfg), "--out", path_arg(dir), "--jobs", "2"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let files = record_files(&a);
    assert_eq!(files.len(), 3);
    assert!(a.join("manifest.json").exists());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let hash = manifest["manifest_hash"].as_str().unwrap().to_string();
    for f in &files {
        let text = fs::read_to_string(f).unwrap();
        assert!(text.starts_with(&format!("# manifest_hash: {hash}")), "{}", f.display());
        let twin = b.join(f.file_name().unwrap());
        assert_eq!(fs::read(f).unwrap(), fs::read(twin).unwrap(), "{}", f.display());
        let corr = f.with_extension("corr.csv");
        assert!(fs::read_to_string(corr).unwrap().contains(&hash));
    }
}

#[test]
fn seed_override_changes_the_records() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(fracising(&["run", "--config", path_arg(&cfg), "--out", path_arg(&a)]).status.success());
    let out = fracising(&["run", "--config", path_arg(&cfg), "--out", path_arg(&b), "--seed-override", "99"]);
    assert!(out.status.success());
    let fa = record_files(&a);
    let fb = record_files(&b);
    assert_eq!(fa.len(), fb.len());
    assert_ne!(fs::read(&fa[0]).unwrap(), fs::read(&fb[0]).unwrap());
}

#[test]
fn run_rejects_orders_beyond_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("q = [1.0]", "q = [2.5]"));
    let out = fracising(&["run", "--config", path_arg(&cfg), "--out", path_arg(&tmp.path().join("s"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("q <= 2"), "{}", stderr(&out));
    assert!(!tmp.path().join("s").exists());
}

#[test]
fn run_rejects_unknown_keys() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("n_measure = 200", "n_measure = 200\nsweeps = 5"));
    let out = fracising(&["run", "--config", path_arg(&cfg), "--out", path_arg(&tmp.path().join("s"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sweeps"), "{}", stderr(&out));
}

#[test]
fn run_reports_partial_failure_and_keeps_the_rest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let store = tmp.path().join("s");
    // A directory squatting on one record path makes that point fail to write.
    fs::create_dir_all(store.join("q1_L16_T0.8_h0.csv")).unwrap();
    let out = fracising(&["run", "--config", path_arg(&cfg), "--out", path_arg(&store)]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("q1_L16_T0.8_h0"));
    assert!(store.join("q1_L16_T0.5_h0.csv").is_file());
    assert!(store.join("q1_L16_T1.1_h0.csv").is_file());
    assert!(store.join("manifest.json").is_file());
}

#[test]
fn analyze_reports_no_transition_for_the_nearest_neighbour_chain() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", CHAIN_Q2);
    let store = tmp.path().join("s");
    let out = fracising(&["run", "--config", path_arg(&cfg), "--out", path_arg(&store)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let (a, b) = (tmp.path().join("a1"), tmp.path().join("a2"));
    for dir in [&a, &b] {
        let out = fracising(&["analyze", path_arg(&store), "--out", path_arg(dir), "--jobs", "2"]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["groups"][0]["transition_detected"], serde_json::Value::Bool(false));

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(store.join("manifest.json")).unwrap()).unwrap();
    let hash = manifest["manifest_hash"].as_str().unwrap();
    assert_eq!(report["manifest_hash"].as_str().unwrap(), hash);
    for entry in fs::read_dir(&a).unwrap() {
        let p = entry.unwrap().path();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes, fs::read(b.join(p.file_name().unwrap())).unwrap(), "{}", p.display());
        if p.extension().is_some_and(|e| e == "csv") {
            assert!(String::from_utf8(bytes).unwrap().starts_with(&format!("# manifest_hash: {hash}")));
        }
    }

    let summary = tmp.path().join("summary.txt");
    let out = fracising(&["report", path_arg(&a), "--out", path_arg(&summary)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(fs::read_to_string(summary).unwrap().contains(hash));
}

#[test]
fn analyze_fails_on_an_empty_store() {
    let tmp = TempDir::new().unwrap();
    let out = fracising(&["analyze", path_arg(tmp.path())]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn analyze_needs_three_sizes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("sizes = [16]", "sizes = [8, 16]"));
    let store = tmp.path().join("s");
    assert!(fracising(&["run", "--config", path_arg(&cfg), "--out", path_arg(&store)]).status.success());
    let out = fracising(&["analyze", path_arg(&store)]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("size"), "{}", stderr(&out));
}
