use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_roadsmog");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// The shipped config with a shorter horizon.
fn short_config(dir: &Path, name: &str, horizon_s: f64) -> PathBuf {
    let text = fs::read_to_string(configs().join(name)).unwrap();
    let text = text.replace("horizon_s = 1800.0", &format!("horizon_s = {horizon_s}"));
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn simulate_twice_gives_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "urban_light_5min.toml", 600.0);
    let outs: Vec<PathBuf> = ["a", "b"].iter().map(|d| tmp.path().join(d)).collect();
    for out in &outs {
        let o = run(&["simulate", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (csv_files(&outs[0]), csv_files(&outs[1]));
    assert!(a.iter().any(|(n, _)| n == "chemistry.csv"));
    assert_eq!(a, b);
    assert!(outs[0].join("metadata.toml").exists());
    assert!(outs[0].join("traffic_density.svg").exists());
}

#[test]
fn sweep_writes_one_row_per_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = short_config(tmp.path(), "urban_no_light.toml", 450.0);
    let out = tmp.path().join("sweep");
    let o = run(&[
        "sweep-tc",
        cfg.to_str().unwrap(),
        "--cycles",
        "150,90",
        "--disable",
        "chemistry",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with("150,60,1.5,"));
}

#[test]
fn failures_exit_nonzero_with_a_stage_tag() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    let text = fs::read_to_string(configs().join("urban_no_light.toml")).unwrap();
    fs::write(&bad, text.replace("cells = 100", "cells = 7")).unwrap();
    let o = run(&["simulate", bad.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("stage `config` failed"), "{err}");

    let o = run(&["simulate", "/nonexistent.toml"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `config`"));

    let o = run(&["simulate", bad.to_str().unwrap(), "--disable", "plumbing"]);
    assert!(!o.status.success());
}

#[test]
fn calibrate_emits_a_flux_fragment() {
    let tmp = tempfile::tempdir().unwrap();
    let traj = roadsmog::trajectory::SyntheticTraffic::default().generate().unwrap();
    let path = tmp.path().join("traj.csv");
    traj.write_csv(fs::File::create(&path).unwrap()).unwrap();
    let out = tmp.path().join("cal");
    let o = run(&[
        "calibrate",
        path.to_str().unwrap(),
        "--road-end-m",
        "500",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let frag = fs::read_to_string(out.join("flux.toml")).unwrap();
    let table: toml::Table = toml::from_str(&frag).unwrap();
    let flux: roadsmog::flux::FluxModel = table["flux"].clone().try_into().unwrap();
    assert!(flux.validate("flux").is_ok());
    assert!(out.join("calibration_report.toml").exists());
}
