use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(config: &str, dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("scenario.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ris-mom"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("--quiet")
        .args(args)
        .output()
        .unwrap()
}

const SMALL: &str = "mx = 3\nmy = 3\nr_list_lambda = [3.0, 5.0, 10.0, 20.0, 40.0, 60.0]\nfit_min_lambda = 5.0\npattern_step_deg = 1.0\n";

#[test]
fn validate_passes_and_catches_fault() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(SMALL, dir.path(), &["validate"]);
    assert_eq!(ok.status.code(), Some(0));
    let report = fs::read_to_string(dir.path().join("out/validate_report.csv")).unwrap();
    assert!(report.starts_with("quantity,value\n"));
    assert!(report.contains("passed,true"));
    let bad = run(SMALL, dir.path(), &["validate", "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for cfg in ["mx = 0\n", "r_list_lambda = []\n", "no_such_key = 3\n", "theta_deg = 120.0\n"] {
        let out = run(cfg, dir.path(), &["validate"]);
        assert_eq!(out.status.code(), Some(1), "{cfg}");
        assert!(!dir.path().join("out/validate_report.csv").exists());
    }
}

#[test]
fn sweep_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(SMALL, d.path(), &["sweep"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["capacity_curve.csv", "exponent_report.csv"] {
        let x = fs::read(a.path().join("out").join(f)).unwrap();
        let y = fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let curve = fs::read_to_string(a.path().join("out/capacity_curve.csv")).unwrap();
    assert!(curve.starts_with("R_lambda,C_fullwave,C_reduced,theta_deg,gamma_dB\n"));
    assert_eq!(curve.lines().count(), 7);
}

#[test]
fn design_handles_single_element() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("mx = 1\nmy = 1\npattern_step_deg = 2.0\n", dir.path(), &["design"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bitmap = fs::read_to_string(dir.path().join("out/state_bitmap.csv")).unwrap();
    assert_eq!(bitmap.lines().count(), 2);
    let pattern = fs::read_to_string(dir.path().join("out/pattern.csv")).unwrap();
    assert!(pattern.starts_with("theta_deg,level_db\n"));
    assert_eq!(pattern.lines().count(), 92);
}

#[test]
fn assemble_and_diagnose_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(SMALL, dir.path(), &["assemble"]).status.code(), Some(0));
    let dump = fs::read(dir.path().join("out/z_matrix.bin")).unwrap();
    let n = 14 + 14 + 63;
    assert_eq!(dump.len(), 24 + 16 * n * n);
    let (dims, z) = ris_mom::em_kernel::read_dump(dump.as_slice()).unwrap();
    assert_eq!(dims, (14, 14, 63));
    assert_eq!(z.nrows(), n);
    let mesh = fs::read_to_string(dir.path().join("out/mesh.csv")).unwrap();
    assert!(mesh.starts_with("x1_lambda,"));

    assert_eq!(run(SMALL, dir.path(), &["diagnose"]).status.code(), Some(0));
    let report = fs::read_to_string(dir.path().join("out/spectral_report.csv")).unwrap();
    for key in ["configured_rho_r", "configured_rho_s", "ris_50ohm_rho_r", "ris_50ohm_rho_s"] {
        assert!(report.contains(key), "{key}");
    }
}

#[test]
fn pattern_writes_three_states() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(SMALL, dir.path(), &["pattern"]).status.code(), Some(0));
    for name in ["optimized", "all_on", "all_off"] {
        assert!(dir.path().join(format!("out/pattern_{name}.csv")).exists());
    }
}
