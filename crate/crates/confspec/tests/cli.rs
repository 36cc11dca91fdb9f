//! End-to-end tests of the command-line interface: determinism contract,
//! exit codes, and artifact files.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_confspec"))
}

#[test]
fn verify_passes_and_is_byte_identical() {
    let run = || {
        bin()
            .args(["verify", "--lattice", "diag:1,2"])
            .env("CONFSPEC_THREADS", "1")
            .output()
            .expect("binary runs")
    };
    let first = run();
    assert!(
        first.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&first.stderr)
    );
    let second = run();
    assert_eq!(first.stdout, second.stdout, "JSON must be byte-identical");

    // Thread count must not change the bytes either.
    let threaded = bin()
        .args(["verify", "--lattice", "diag:1,2"])
        .env("CONFSPEC_THREADS", "4")
        .output()
        .expect("binary runs");
    assert!(threaded.status.success());
    let a: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&threaded.stdout).unwrap();
    // The config echo records the thread count; everything else is equal.
    let strip = |mut v: serde_json::Value| {
        v["config"]["threads"].take();
        v
    };
    assert_eq!(strip(a.clone()), strip(b));

    assert_eq!(a["schema"], "1");
    assert_eq!(a["pass"], true);
    let alpha = a["perturbation"]["alpha"].as_f64().unwrap();
    let lambda = std::f64::consts::PI.powi(2);
    assert!((alpha - lambda / 6.0).abs() < 1e-10);
    // Stage lines on stderr, one per check.
    let stderr = String::from_utf8_lossy(&first.stderr);
    assert!(stderr.contains("[PASS] functional_alpha_match"));
}

#[test]
fn verify_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "verify",
            "--lattice",
            "diag:1,2",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let bundle = std::fs::read_to_string(dir.path().join("verify.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&bundle).unwrap();
    assert_eq!(parsed["pass"], true);
    let branches = std::fs::read_to_string(dir.path().join("branches.csv")).unwrap();
    assert!(branches.starts_with("t,branch_id,value"));
    assert!(branches.lines().count() > 10);
}

#[test]
fn malformed_lattice_is_usage_error() {
    let out = bin()
        .args(["spectrum", "--lattice", "diag:1,oops"])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bad diagonal entry"));

    // Malformed JSON file: parse diagnostic, same exit class.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\"n\": 2, \"basis_columns\": [[1,0]]").unwrap();
    let out = bin()
        .args(["spectrum", "--lattice", path.to_str().unwrap()])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn spectrum_formats() {
    let out = bin()
        .args([
            "spectrum",
            "--lattice",
            "diag:1,2",
            "--levels",
            "5",
            "--format",
            "csv",
        ])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "index,eigenvalue,q,multiplicity,representatives"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "1");
    assert_eq!(first[3], "2"); // multiplicity of level one
    assert_eq!(text.lines().count(), 6);

    let out = bin()
        .args(["spectrum", "--lattice", "eye:2", "--levels", "1"])
        .output()
        .expect("binary runs");
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["levels"][0]["multiplicity"], 4);
    let eig = parsed["levels"][0]["eigenvalue"].as_f64().unwrap();
    assert!((eig - 4.0 * std::f64::consts::PI.powi(2)).abs() < 1e-9);
}

#[test]
fn sweep_csv_rows() {
    let out = bin()
        .args([
            "sweep", "--family", "diag-s", "--from", "1.0", "--to", "1.3", "--step", "0.1",
            "--format", "csv",
        ])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "parameter,lambda_1,hypothesis,alpha,bound,equality,error");
    assert_eq!(lines.len(), 5);
    // s = 1 (square): hypothesis false, equality true, alpha empty.
    assert!(lines[1].contains("false"));
    assert!(lines[1].contains("true"));
    // s = 1.1: hypothesis true.
    assert!(lines[2].starts_with("1.1"));
    assert!(lines[2].contains("true,"));
}

#[test]
fn theorem4_verdicts() {
    let out = bin()
        .args(["theorem4", "--lattice", "diag:1,2"])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["verdict"], "NotMaximal");
    assert_eq!(parsed["identities"].as_array().unwrap().len(), 6);

    let out = bin()
        .args(["theorem4", "--lattice", "eye:2"])
        .output()
        .expect("binary runs");
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["verdict"], "Inapplicable");
}

#[test]
fn inadmissible_direction_stops_with_partial_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let phi_path = dir.path().join("phi.json");
    // cos(4πw·x) on diag(1,2): fails the mass condition with residual 1/2.
    std::fs::write(
        &phi_path,
        r#"{"terms": [{"coords": [0, 2], "re": 0.5, "im": 0.0}], "hermitian_one_sided": true}"#,
    )
    .unwrap();
    let out = bin()
        .args([
            "verify",
            "--lattice",
            "diag:1,2",
            "--phi",
            phi_path.to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert_eq!(out.status.code(), Some(2));
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["stopped_at"], "admissibility");
    assert_eq!(parsed["admissibility"]["admissible"], false);
    let residual = parsed["admissibility"]["residual_mass"].as_f64().unwrap();
    assert!((residual - 0.5).abs() < 1e-12);
    assert!(parsed.get("perturbation").is_none());
}

#[test]
fn admissible_reports_subspace() {
    let out = bin()
        .args(["admissible", "--lattice", "diag:1,2"])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed["admissible"], true);
    assert_eq!(parsed["subspace_dimension"], 2);
}

#[test]
fn perturb_reports_closed_form() {
    let out = bin()
        .args(["perturb", "--lattice", "diag:1,1,2", "--k", "1"])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let lambda = std::f64::consts::PI.powi(2);
    let mu = parsed["mu"].as_f64().unwrap();
    assert!((mu + 5.0 * lambda / 12.0).abs() < 1e-10);
    let alpha = parsed["alpha"].as_f64().unwrap();
    let expect = 2.0 * lambda / 3.0 * 2f64.powf(-1.0 / 3.0);
    assert!((alpha - expect).abs() < 1e-10);
    assert_eq!(parsed["schema"], "1");
}
