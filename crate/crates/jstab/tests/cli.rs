use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn jstab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jstab")).args(args).output().expect("run jstab")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{
  "seed": 7,
  "model": {"kind": "FULL_RECTANGULAR", "m": 3, "n": 2},
  "perturbation": {"epsilon": 0.001, "rho_inner": 0.5, "rho_outer": 2.0},
  "control": {"type": "power", "p": 0.5, "r": 2.0},
  "engine": "BOTH",
  "samples": {"count": 500, "norm_range": [0.05, 20.0]},
  "closure_trials": 40
}"#;

#[test]
fn algebra_check_reports_closure() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "m.json", r#"{"model": {"kind": "CARTAN_II_ANTISYMMETRIC", "m": 3, "n": 3}, "trials": 50}"#);
    let out = jstab(&["algebra", "check", "--spec", &spec]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["closed"], true);
    assert_eq!(v["trials"], 50);
}

#[test]
fn derivation_make_respects_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "d.json", r#"{"model": {"kind": "CARTAN_III_SYMMETRIC", "m": 2, "n": 2}, "seed": 1}"#);
    let a = jstab(&["derivation", "make", "--spec", &spec]);
    let b = jstab(&["derivation", "make", "--spec", &spec, "--seed", "2"]);
    assert!(a.status.success() && b.status.success());
    assert_ne!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert!(v["A"]["re"].is_array() && v["B"]["im"].is_array());
}

#[test]
fn experiment_run_writes_deterministic_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "e.json", SMALL);
    let mut reports = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = jstab(&["experiment", "run", "--spec", &spec, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let table = fs::read_to_string(out_dir.join("bound_ratios.csv")).unwrap();
        assert_eq!(table.lines().count(), 501);
        reports.push(fs::read_to_string(out_dir.join("report.json")).unwrap());
    }
    // The echoed spec records the output directory; everything else matches.
    let strip = |s: &str| s.lines().filter(|l| !l.contains("output_path")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&reports[0]), strip(&reports[1]));
}

#[test]
fn low_theta_exits_nonzero_naming_certification() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "e.json", &SMALL.replace("\"type\": \"power\",", "\"type\": \"power\", \"theta\": 1e-7,"));
    let out = jstab(&["experiment", "run", "--spec", &spec, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("certification"));
}

#[test]
fn recover_and_certify_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "e.json", SMALL);
    let cert = jstab(&["perturb", "certify", "--spec", &spec]);
    assert!(cert.status.success());
    let v: serde_json::Value = serde_json::from_slice(&cert.stdout).unwrap();
    assert!(v["theta_required"].as_f64().unwrap() > 0.0);

    let direct = jstab(&["recover", "direct", "--spec", &spec]);
    assert!(direct.status.success());
    let v: serde_json::Value = serde_json::from_slice(&direct.stdout).unwrap();
    assert_eq!(v["verdict"], "PASS");

    let fixed = jstab(&["recover", "fixedpoint", "--spec", &spec, "--out", dir.path().to_str().unwrap()]);
    assert!(fixed.status.success());
    assert!(dir.path().join("fixed_point.json").exists());
    let v: serde_json::Value = serde_json::from_slice(&fixed.stdout).unwrap();
    assert_eq!(v["branch"], "EVENTUALLY_FINITE");
    assert_eq!(v["m0"], 0);
}

#[test]
fn invalid_spec_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "e.json", &SMALL.replace("\"p\": 0.5", "\"p\": 1.2"));
    let out = jstab(&["experiment", "run", "--spec", &spec]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("p = 1.2"));
}
