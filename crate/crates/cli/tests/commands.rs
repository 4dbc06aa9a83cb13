use serde_json::Value;
use srctrace::heat::{BoundaryTrace, Grid2D, TimeMesh};
use srctrace::scenario::{build_paper_case_on, Scenario};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn small(points: usize) -> Scenario {
    let grid = Grid2D::new(1000.0, 1000.0, 21, 21).unwrap();
    let mesh = TimeMesh::new(138_240.0, 172_800.0, 40, 10).unwrap();
    build_paper_case_on(points, grid, mesh).unwrap()
}

fn write_scenario(dir: &Path, name: &str, s: &Scenario) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(s).unwrap()).unwrap();
    p
}

fn srctrace(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srctrace"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

const SMALL_INVERSION: [&str; 8] = ["--w", "4,4,3", "--max-sources", "3", "--restarts", "4", "--modes", "2"];

#[test]
fn generate_is_deterministic_and_records_parameters() {
    let dir = TempDir::new().unwrap();
    let scenario = small(2);
    let sc = write_scenario(dir.path(), "s.json", &scenario);
    let sc = sc.to_str().unwrap();
    ok(&srctrace(dir.path(), &["generate", "--scenario", sc, "--trace", "a.bin"]));
    ok(&srctrace(dir.path(), &["generate", "--scenario", sc, "--trace", "b.bin"]));
    let a = std::fs::read(dir.path().join("a.bin")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.bin")).unwrap());

    let (trace, header): (BoundaryTrace, _) = BoundaryTrace::load(&dir.path().join("a.bin")).unwrap();
    assert_eq!(header.grid, scenario.grid);
    assert_eq!(header.mesh, Some(scenario.mesh));
    assert_eq!(header.kappa, Some(scenario.kappa));
    assert!(trace.values().any(|v| *v != 0.0));
    assert!(dir.path().join("a.bin.manifest.json").exists());
}

#[test]
fn zero_source_scenario_gives_zero_payload_and_no_detection() {
    let dir = TempDir::new().unwrap();
    let mut scenario = small(2);
    scenario.truth.sources.clear();
    let sc = write_scenario(dir.path(), "empty.json", &scenario);
    let sc = sc.to_str().unwrap();
    ok(&srctrace(dir.path(), &["generate", "--scenario", sc, "--trace", "t.bin"]));
    let (trace, _): (BoundaryTrace, _) = BoundaryTrace::load(&dir.path().join("t.bin")).unwrap();
    assert!(trace.values().all(|v| *v == 0.0));

    ok(&srctrace(dir.path(), &["precompute", "--scenario", sc, "--cache", "c.bin", "--w", "4,4,3"]));
    let mut args = vec!["invert", "--trace", "t.bin", "--cache", "c.bin", "--output", "out"];
    args.extend(SMALL_INVERSION);
    let out = srctrace(dir.path(), &args);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("no detectable source"));
    let result: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/result.json")).unwrap()).unwrap();
    assert_eq!(result["detected"], Value::Bool(false));
}

#[test]
fn precompute_rerun_solves_nothing() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(dir.path(), "s.json", &small(2));
    let args = ["precompute", "--scenario", sc.to_str().unwrap(), "--cache", "c.bin", "--w", "2,2,2"];
    let first = srctrace(dir.path(), &args);
    ok(&first);
    assert!(String::from_utf8_lossy(&first.stderr).contains("8 entries, 0 reused, 8 solved"));
    let bytes = std::fs::read(dir.path().join("c.bin")).unwrap();
    let second = srctrace(dir.path(), &args);
    ok(&second);
    assert!(String::from_utf8_lossy(&second.stderr).contains("8 entries, 8 reused, 0 solved"));
    assert_eq!(bytes, std::fs::read(dir.path().join("c.bin")).unwrap());
}

#[test]
fn missing_cache_names_the_precompute_command() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(dir.path(), "s.json", &small(2));
    ok(&srctrace(dir.path(), &["generate", "--scenario", sc.to_str().unwrap(), "--trace", "t.bin"]));
    let out = srctrace(dir.path(), &["invert", "--trace", "t.bin", "--cache", "missing.bin"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("srctrace precompute"));
}

#[test]
fn invert_with_both_methods_writes_two_curve_sets_and_a_manifest() {
    let dir = TempDir::new().unwrap();
    let sc = write_scenario(dir.path(), "s.json", &small(2));
    let sc = sc.to_str().unwrap();
    ok(&srctrace(dir.path(), &["generate", "--scenario", sc, "--trace", "t.bin"]));
    ok(&srctrace(dir.path(), &["precompute", "--scenario", sc, "--cache", "c.bin", "--w", "4,4,3"]));
    let mut args = vec!["invert", "--trace", "t.bin", "--cache", "c.bin", "--output", "out", "--method", "both"];
    args.extend(SMALL_INVERSION);
    ok(&srctrace(dir.path(), &args));

    let out = dir.path().join("out");
    let result: Value = serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    let m = result["m"].as_u64().unwrap() as usize;
    assert!(m >= 1);
    for key in ["ifourier", "approx"] {
        assert_eq!(result["intensities"][key].as_array().unwrap().len(), m, "{key}");
    }
    assert!(result["errors"].is_object());
    let csv = std::fs::read_to_string(out.join("intensity_0.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), 4);
    assert!(row[2..].iter().all(|c| c.parse::<f64>().is_ok()), "{row:?}");

    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "invert");
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(manifest["versions"]["srctrace"].is_string());
    assert_eq!(manifest["inputs"][0][0], "t.bin");

    let report = srctrace(dir.path(), &["report", "--output", "out"]);
    ok(&report);
    assert!(String::from_utf8_lossy(&report.stdout).contains("sources"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"modes": 0}"#).unwrap();
    let out = srctrace(dir.path(), &["report", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(1));
    let out = srctrace(dir.path(), &["report", "--config", "cfg.json", "--modes", "3"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("srctrace invert"));
}
