//! End-to-end behavior of the `fuelcell` binary: configuration strictness,
//! structured diagnostics, exit codes, artifact layout, reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fuelcell_core::analytics::w_state_photon_number;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_fuelcell")
}

fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_file(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_diagnostic(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text
        .lines()
        .find(|l| l.trim_start().starts_with('{'))
        .unwrap_or_else(|| panic!("no JSON diagnostic on stderr, got: {text}"));
    serde_json::from_str(line).expect("diagnostic is valid JSON")
}

#[test]
fn unknown_configuration_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        (
            r#"{"schema": 1, "state": {"named": "w_symmetric"}, "bogus": 3}"#,
            "config_parse",
        ),
        (
            r#"{"schema": 1, "state": {"named": {"two_atom_squeeze": {"theta": 0.3, "extra": 1}}}}"#,
            "config_parse",
        ),
        (r#"{"schema": 9, "state": {"named": "w_symmetric"}}"#, "config_invalid"),
        (
            r#"{"schema": 1, "state": {"named": "w_symmetric"}, "evolution": {"dtt": 0.1}}"#,
            "config_parse",
        ),
    ];
    for (k, (text, want_code)) in cases.iter().enumerate() {
        let cfg = write_file(tmp.path(), &format!("bad{k}.json"), text);
        let out = run_cli(
            &["coeffs", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
            &[],
        );
        assert_eq!(out.status.code(), Some(1), "case {k}");
        let diag = stderr_diagnostic(&out);
        assert_eq!(diag["code"], *want_code, "case {k}: {diag}");
    }
}

#[test]
fn missing_config_path_and_file_are_reported() {
    let out = run_cli(&["coeffs"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_diagnostic(&out)["code"], "usage");

    let out = run_cli(&["coeffs", "--config", "/nonexistent/cfg.json"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_diagnostic(&out)["code"], "io");
}

#[test]
fn classify_counts_heat_triangle_of_w_fuel() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_file(
        tmp.path(),
        "w.json",
        r#"{"schema": 1, "state": {"named": "w_symmetric"}}"#,
    );
    let out = run_cli(
        &["classify", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let artifact = read_json(&tmp.path().join("classification.json"));
    assert_eq!(artifact["n_atoms"], 3);
    assert_eq!(artifact["counts"]["population"]["nonzero"], 3);
    assert_eq!(artifact["counts"]["heat-exchange"]["nonzero"], 6);
    assert_eq!(artifact["counts"]["displacement"]["nonzero"], 0);
    assert_eq!(artifact["counts"]["squeezing"]["nonzero"], 0);
    assert_eq!(artifact["counts"]["ineffective"]["nonzero"], 0);
    assert_eq!(artifact["grid"][0][7], "ineffective");
    let status = read_json(&tmp.path().join("status.json"));
    assert_eq!(status["status"], "completed");
    assert_eq!(status["command"], "classify");
}

#[test]
fn classify_counts_displacement_pair_of_balanced_single_atom() {
    let tmp = tempfile::tempdir().unwrap();
    let amp = 1.0 / 2f64.sqrt();
    let cfg = write_file(
        tmp.path(),
        "plus.json",
        &format!(
            r#"{{"schema": 1, "state": {{"amplitudes": {{"n_atoms": 1, "values": [[{amp}, 0.0], [{amp}, 0.0]]}}}}}}"#
        ),
    );
    let out = run_cli(
        &["classify", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    let artifact = read_json(&tmp.path().join("classification.json"));
    assert_eq!(artifact["counts"]["population"]["nonzero"], 2);
    assert_eq!(artifact["counts"]["displacement"]["nonzero"], 2);
    assert_eq!(artifact["counts"]["heat-exchange"]["nonzero"], 0);
}

#[test]
fn coeffs_cross_check_and_analytics_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_file(
        tmp.path(),
        "sq.json",
        r#"{"schema": 1, "state": {"named": {"two_atom_squeeze": {"theta": 0.3}}}}"#,
    );
    let out = run_cli(
        &["coeffs", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let artifact = read_json(&tmp.path().join("coefficients.json"));
    assert_eq!(artifact["consistent"], true);
    assert_eq!(artifact["machine_kind"], "first kind");
    let r = artifact["squeezed_bath"]["r"].as_f64().unwrap();
    assert!((r - 0.3f64.tan().atanh()).abs() <= 1e-12, "r = {r}");
    assert!(artifact["thermal"]["skipped"].is_string());

    // A density matrix given entry by entry reproduces the named catalog
    // coefficients bit for bit.
    let third = "[0.3333333333333333, 0.0]";
    let zero = "[0.0, 0.0]";
    let mut rows = Vec::new();
    for i in 0..8 {
        let mut row = Vec::new();
        for j in 0..8 {
            // The single-excitation triangle occupies indices 4, 5, 6.
            if (4..=6).contains(&i) && (4..=6).contains(&j) {
                row.push(third);
            } else {
                row.push(zero);
            }
        }
        rows.push(format!("[{}]", row.join(", ")));
    }
    let cfg = write_file(
        tmp.path(),
        "w_matrix.json",
        &format!(
            r#"{{"schema": 1, "state": {{"matrix": {{"n_atoms": 3, "values": [{}]}}}}}}"#,
            rows.join(", ")
        ),
    );
    let out2 = run_cli(
        &["coeffs", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out2.status.code(), Some(0), "{}", String::from_utf8_lossy(&out2.stderr));
    let artifact2 = read_json(&tmp.path().join("coefficients.json"));
    assert_eq!(artifact2["basis_sums"]["r_e"].as_f64().unwrap(), 3.0);
    assert_eq!(artifact2["basis_sums"]["r_g"].as_f64().unwrap(), 4.0);
    assert_eq!(artifact2["machine_kind"], "second kind");
}

#[test]
fn evolve_is_reproducible_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_file(
        tmp.path(),
        "mc.json",
        r#"{"schema": 1, "state": {"named": "ghz_symmetric"},
            "evolution": {"method": "monte_carlo", "dt": 1.0, "t_max": 500.0,
                          "fock_dim": 30, "sample_stride": 10, "seed": 7}}"#,
    );
    let run = |out_dir: &str, extra: &[&str]| {
        let dir = tmp.path().join(out_dir);
        let mut args = vec![
            "evolve",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let out = run_cli(&args, &[]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.join("trajectory.csv")).unwrap()
    };
    let a = run("a", &[]);
    let b = run("b", &[]);
    let c = run("c", &["--seed", "9"]);
    assert_eq!(a, b, "same seed, same bytes");
    assert_ne!(a, c, "different seed, different track");

    // The threshold fuel outgrows the 30-level ladder; that is a recorded
    // outcome, not an error.
    let status = read_json(&tmp.path().join("a").join("status.json"));
    assert_eq!(status["status"], "leakage_aborted");
    assert!(status["detail"]["leakage_abort"]["t"].as_f64().unwrap() > 0.0);
    assert_eq!(status["detail"]["method"], "monte_carlo");
    assert_eq!(status["detail"]["seed"], 7);
}

#[test]
fn sweep_custom_grid_honors_fixed_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_file(
        tmp.path(),
        "custom.json",
        r#"{"schema": 1, "custom": {"quantity": "w_photon_number",
            "axes": [{"name": "theta", "start": 0.0, "stop": 1.0, "count": 5}],
            "fixed": {"psi": 0.8}}}"#,
    );
    let out = run_cli(
        &["sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "theta,value,status");
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        let theta: f64 = cells[0].parse().unwrap();
        let value: f64 = cells[1].parse().unwrap();
        assert_eq!(theta, i as f64 / 4.0);
        assert_eq!(value, w_state_photon_number(theta, 0.8, 0.0, 0.0));
        assert_eq!(cells[2], "ok");
        rows += 1;
    }
    assert_eq!(rows, 5);
}

#[test]
fn sweep_rejects_oversized_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_file(
        tmp.path(),
        "big.json",
        r#"{"schema": 1, "custom": {"quantity": "w_photon_number",
            "axes": [{"name": "theta", "start": 0, "stop": 3, "count": 2000},
                     {"name": "psi", "start": 0, "stop": 3, "count": 2000}]}}"#,
    );
    let out = run_cli(
        &["sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_diagnostic(&out)["code"], "grid_too_large");
}

#[test]
fn sweep_flags_are_mutually_checked() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_file(tmp.path(), "p.json", r#"{"schema": 1, "preset": "fig7"}"#);
    // Preset via config file works like the flag.
    let out = run_cli(
        &["sweep", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(tmp.path().join("fig7.csv").exists());
    // Flag and config together are ambiguous.
    let out = run_cli(
        &["sweep", "--preset", "fig7", "--config", cfg.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_diagnostic(&out)["code"], "usage");
    // Neither is an error too.
    let out = run_cli(&["sweep"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_diagnostic(&out)["code"], "usage");
}

#[test]
fn sweep_output_is_byte_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (dir, jobs) in [("j1", "1"), ("j4", "4")] {
        let path = tmp.path().join(dir);
        let out = run_cli(
            &["sweep", "--preset", "fig7", "--out", path.to_str().unwrap(), "--jobs", jobs],
            &[],
        );
        assert_eq!(out.status.code(), Some(0));
        outputs.push(std::fs::read(path.join("fig7.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn jobs_environment_variable_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cli(
        &["sweep", "--preset", "fig7", "--out", tmp.path().to_str().unwrap()],
        &[("FUELCELL_JOBS", "2")],
    );
    assert_eq!(out.status.code(), Some(0));
    let out = run_cli(
        &["sweep", "--preset", "fig7", "--out", tmp.path().to_str().unwrap()],
        &[("FUELCELL_JOBS", "abc")],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_diagnostic(&out)["code"], "usage");
}

#[test]
fn validation_suite_passes_and_writes_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_cli(&["validate", "--out", tmp.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let artifact = read_json(&tmp.path().join("validation.json"));
    assert_eq!(artifact["passed"], true);
    let checks = artifact["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 5);
    for check in checks {
        assert_eq!(check["passed"], true, "{check}");
    }
    let status = read_json(&tmp.path().join("status.json"));
    assert_eq!(status["status"], "completed");
}
