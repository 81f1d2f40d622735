use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ergodic"))
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(config: &Path, out: &Path) -> Output {
    bin().arg("run").arg(config).arg("--out").arg(out).output().unwrap()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn ergodic_sine_reports_zero_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&example("ergodic_sine.json"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    assert!(s["U"].as_f64().unwrap().abs() <= 1e-3);
    assert!(dir.path().join("corrector.csv").exists());
    assert!(dir.path().join("lambda_trace.csv").exists());
}

#[test]
fn too_coarse_grid_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let raw = fs::read_to_string(example("ergodic_sine.json")).unwrap();
    let raw = raw.replace("\"points_per_axis\": 256", "\"points_per_axis\": 2");
    let cfg = dir.path().join("coarse.json");
    fs::write(&cfg, raw).unwrap();
    let out = run(&cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("points_per_axis"));
}

#[test]
fn config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let raw = fs::read_to_string(example("ergodic_sine.json")).unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, raw.replace("\"nu\": 1.0", "\"nu\": \"one\"")).unwrap();
    let out = run(&cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("problem.nu"));
    let out = run(&dir.path().join("missing.json"), &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let raw = fs::read_to_string(example("ergodic_sine.json")).unwrap();
    // An unreachable continuation tolerance exhausts the λ schedule.
    let raw = raw.replace("\"points_per_axis\": 256,", "\"points_per_axis\": 32, \"tol\": 1e-300,");
    let cfg = dir.path().join("strict.json");
    fs::write(&cfg, raw).unwrap();
    let out = run(&cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn rate_semilinear_meets_the_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&example("rate_semilinear.json"), dir.path());
    assert!(out.status.success());
    let s = summary(dir.path());
    assert!(s["fitted_theta"].as_f64().unwrap() >= 0.9);
    assert_eq!(s["all_checks_pass"], Value::Bool(true));
}

#[test]
fn list_includes_headline_configs() {
    let out = bin().args(["list", "--dir"]).arg(example("")).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["ergodic_sine", "cde_scaling_ell", "rate_semilinear"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
    // Every expected number is listed with where it comes from.
    assert!(text
        .lines()
        .filter(|l| l.contains("expects"))
        .all(|l| l.trim_end().ends_with(')')));
}

#[test]
fn list_of_empty_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["list", "--dir"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);
}

#[test]
fn runs_are_deterministic() {
    for name in [
        "effective_h_switching.json",
        "cde_scaling_a.json",
        "ergodic_switching.json",
    ] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        assert!(run(&example(name), a.path()).status.success());
        let out = bin()
            .args(["run", "--workers", "3", "--out"])
            .arg(b.path())
            .arg(example(name))
            .output()
            .unwrap();
        assert!(out.status.success());
        for entry in fs::read_dir(a.path()).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "csv") {
                let other = b.path().join(path.file_name().unwrap());
                assert!(
                    fs::read(&path).unwrap() == fs::read(&other).unwrap(),
                    "{name}: {}",
                    path.display()
                );
            }
        }
    }
}

#[test]
fn manifest_lists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--verbose", "--out"])
        .arg(dir.path())
        .arg(example("cde_shift_independence.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["file"].as_str().unwrap())
        .collect();
    for entry in fs::read_dir(dir.path()).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        if name != "manifest.json" {
            assert!(listed.contains(&name.as_str()), "{name} not in manifest");
        }
    }
    for a in manifest["artifacts"].as_array().unwrap() {
        let bytes = fs::read(dir.path().join(a["file"].as_str().unwrap())).unwrap();
        assert_eq!(a["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(a["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["wall_time_seconds"].as_f64().is_some());
}

#[test]
fn every_shipped_config_reproduces_its_expectations() {
    let dir = tempfile::tempdir().unwrap();
    let mut names: Vec<_> = fs::read_dir(example("")).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for cfg in names.iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
        let out_dir = dir.path().join(cfg.file_stem().unwrap());
        let out = run(cfg, &out_dir);
        assert!(
            out.status.success(),
            "{}: {}",
            cfg.display(),
            String::from_utf8_lossy(&out.stderr)
        );
        let s = summary(&out_dir);
        assert_eq!(
            s["all_checks_pass"],
            Value::Bool(true),
            "{}: {}",
            cfg.display(),
            s["checks"]
        );
    }
}
