use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn riskcp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskcp"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn generate_calibrate_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&riskcp(d, &["generate", "--num-labels", "3", "--n", "200", "--accuracy", "0.6", "--seed", "1", "--out", "s.csv"]));
    for method in ["scp", "rccp"] {
        ok(&riskcp(d, &["calibrate", "--scores", "s.csv", "--method", method, "--alpha", "0.1", "--out", "c.json"]));
        ok(&riskcp(d, &["predict", "--calibration", "c.json", "--scores", "s.csv", "--out", "p.csv"]));
        let table = fs::read_to_string(d.join("p.csv")).unwrap();
        assert_eq!(table.lines().count(), 201);
        let covered = table.lines().skip(1).filter(|l| l.split(',').nth(2) == Some("true")).count();
        // In-sample coverage of the calibrated threshold.
        assert!(covered >= 180, "{method}: {covered}");
    }
}

#[test]
fn experiment_flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("cfg.json"), r#"{"trials": 3, "alphas": [0.1, 0.3], "seed": 4}"#).unwrap();
    ok(&riskcp(d, &["experiment", "scp", "--config", "cfg.json", "--trials", "2", "--n", "300", "--out", "r.json"]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["trials"], 2);
    assert_eq!(report["config"]["seed"], 4);
    assert_eq!(report["config"]["source"]["n"], 300);
    assert_eq!(report["results"].as_array().unwrap().len(), 2);
    assert!(d.join("r.results.csv").exists());

    // Rerunning from the echoed config reproduces the report.
    fs::write(d.join("echo.json"), report["config"].to_string()).unwrap();
    ok(&riskcp(d, &["--threads", "2", "experiment", "scp", "--config", "echo.json", "--out", "r2.json"]));
    assert_eq!(fs::read(d.join("r.json")).unwrap(), fs::read(d.join("r2.json")).unwrap());
}

#[test]
fn errors_carry_a_category_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: [(&[&str], &str, i32); 3] = [
        (&["calibrate", "--scores", "missing.csv", "--alpha", "0.1", "--out", "c.json"], "error[io]", 3),
        (&["experiment", "scp", "--alphas", "1.5", "--out", "r.json"], "error[config]", 5),
        (&["experiment", "scp", "--trials", "0", "--out", "r.json"], "error[config]", 5),
    ];
    for (args, prefix, code) in cases {
        let out = riskcp(d, args);
        assert_eq!(out.status.code(), Some(code), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with(prefix), "{args:?}");
    }

    fs::write(d.join("bad.csv"), "id,label,a,b\nx,a,0.5\n").unwrap();
    let out = riskcp(d, &["calibrate", "--scores", "bad.csv", "--alpha", "0.1", "--out", "c.json"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}
