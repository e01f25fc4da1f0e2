use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn spopo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spopo"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("failed to launch spopo")
}

fn run_ok(args: &[&str]) {
    let out = spopo(args);
    assert!(out.status.success(), "spopo {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn read_csv(p: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let idx = rows[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[1..].iter().map(|r| r[idx].parse().unwrap()).collect()
}

#[test]
fn zero_pump_has_infinite_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("zero_pump.json");
    run_ok(&["supermodes", "-c", cfg.to_str().unwrap(), "-o", tmp.path().to_str().unwrap()]);
    let thr = read_json(&tmp.path().join("threshold.json"));
    assert_eq!(thr["threshold_sigma"], "inf");
}

#[test]
fn supermodes_lists_every_mode() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("gaussian_comb.json");
    run_ok(&["supermodes", "-c", cfg.to_str().unwrap(), "-o", tmp.path().to_str().unwrap()]);
    let rows = read_csv(&tmp.path().join("eigenvalues.csv"));
    assert_eq!(rows.len() - 1, 17);
    let manifest = read_json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["subcommand"], "supermodes");
    assert_eq!(manifest["config"]["n_side"], 8);
    let files: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|o| o["file"].as_str().unwrap()).collect();
    assert!(files.contains(&"eigenvalues.csv") && files.contains(&"threshold.json"));
}

#[test]
fn dark_spectra_above_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("single_mode.json");
    let (c, o) = (cfg.to_str().unwrap(), tmp.path().join("yd"));
    run_ok(&["spectrum", "-c", c, "-o", o.to_str().unwrap(), "--quadrature", "yd"]);
    let v = column(&read_csv(&o.join("spectrum.csv")), "V");
    assert!(v[0].abs() < 1e-12);
    let analytic = column(&read_csv(&o.join("spectrum.csv")), "V_analytic");
    for (v, a) in v.iter().zip(&analytic) {
        assert!((v - a).abs() < 1e-10, "{v} vs {a}");
    }

    let o = tmp.path().join("xd");
    run_ok(&["spectrum", "-c", c, "-o", o.to_str().unwrap(), "--quadrature", "xd"]);
    for v in column(&read_csv(&o.join("spectrum.csv")), "V") {
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn supermode_spectrum_below_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    // single mode at sigma = 1/2: V(0) = ((1 - sigma)/(1 + sigma))^2 = 1/9
    let cfg = write_config(
        tmp.path(),
        "below.json",
        r#"{"n_side":0,"gamma":1.0,"kappa":1.0,"sigma":0.5,"pump":{"kind":"monochromatic"},"mismatch":{"kind":"perfect"}}"#,
    );
    let o = tmp.path().join("out");
    run_ok(&["spectrum", "-c", cfg.to_str().unwrap(), "-o", o.to_str().unwrap(), "--quadrature", "supermode"]);
    let summary = read_json(&o.join("spectrum.json"));
    let sq = summary["V_squeezed_first"].as_f64().unwrap();
    let anti = summary["V_antisqueezed_first"].as_f64().unwrap();
    assert!((sq - 1.0 / 9.0).abs() < 1e-10, "{sq}");
    assert!((anti - 9.0).abs() < 1e-8, "{anti}");
}

#[test]
fn rejects_empty_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("single_mode.json");
    let out = spopo(&["montecarlo", "-c", cfg.to_str().unwrap(), "-o", tmp.path().to_str().unwrap(), "--n-traj", "0"]);
    assert!(!out.status.success());
    assert!(!tmp.path().join("ensemble.json").exists());
}

#[test]
fn rejects_malformed_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.json", r#"{"n_side":0,"gamma":-1.0}"#);
    let out = spopo(&["supermodes", "-c", cfg.to_str().unwrap(), "-o", tmp.path().join("o").to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn sweep_matches_single_point_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("single_mode.json");
    let grid = write_config(tmp.path(), "grid.json", r#"{"sigma":[2.0,5.0]}"#);
    let o = tmp.path().join("sweep");
    run_ok(&["sweep", "-c", cfg.to_str().unwrap(), "-o", o.to_str().unwrap(), "--grid", grid.to_str().unwrap()]);
    let rows = read_csv(&o.join("sweep.csv"));
    let slopes = column(&rows, "predicted_phase_slope");
    assert!((slopes[0] - 0.25).abs() < 1e-12 && (slopes[1] - 0.0625).abs() < 1e-12, "{slopes:?}");
    for v in column(&rows, "V_Yd_0") {
        assert!(v.abs() < 1e-12);
    }

    let s = tmp.path().join("steady");
    run_ok(&["steady-state", "-c", cfg.to_str().unwrap(), "-o", s.to_str().unwrap()]);
    let steady = read_json(&s.join("steady.json"));
    assert!((steady["norm_sq"].as_f64().unwrap() - column(&rows, "norm_sq")[0]).abs() < 1e-12);
}

#[test]
fn field_vanishes_on_nodal_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("gaussian_comb.json");
    run_ok(&["field", "-c", cfg.to_str().unwrap(), "-o", tmp.path().to_str().unwrap(), "--n-t", "8", "--n-z", "4"]);
    let f = read_json(&tmp.path().join("field.json"));
    assert!(f["nodal_line_max_abs"].as_f64().unwrap() < 1e-10, "{f}");
}
