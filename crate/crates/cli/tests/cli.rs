use std::process::Command;

fn vecfem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vecfem"))
}

#[test]
fn bench_writes_versioned_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let status = vecfem()
        .args(["bench", "--levels", "3", "--order", "1", "--targets", "mass", "--reps", "5", "--base-n-div", "4"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8(status.stdout).unwrap();
    assert!(stdout.contains("slope mass vectorized"), "{stdout}");

    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("version,target,order,n,n_e,algorithm,repetitions"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.starts_with("1,mass,1,") && r.ends_with(",true")));
}

#[test]
fn bench_rejects_bad_order() {
    let out = vecfem().args(["bench", "--order", "3", "--out", "x.csv"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn heat_runs_a_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.json");
    std::fs::write(
        &cfg,
        r#"{
          "geometry": {"kind": "rectangle", "width": 0.2, "height": 0.2, "n_div": 4},
          "order": 2, "dt": 10, "t_final": 50,
          "material": {"density": 2400, "specific_heat": 1000,
                       "conductivity": {"kind": "piecewise_linear", "breakpoints": [0, 200, 1000], "values": [1.5, 0.7, 0.5]}},
          "initial": 0,
          "boundary": [{"tags": [1, 2, 3, 4], "kind": "convection_radiation", "h_c": 10, "emissivity": 0.8, "t_ambient": 1000}],
          "probes": [[0.1, 0.1]]
        }"#,
    )
    .unwrap();
    let series = dir.path().join("series.csv");
    let summary = dir.path().join("summary.json");
    let snaps = dir.path().join("snaps");
    let out = vecfem()
        .arg("heat")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&series)
        .arg("--summary")
        .arg(&summary)
        .args(["--snapshot-stride", "2", "--snapshot-dir"])
        .arg(&snaps)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&series).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(s["n_steps"], 5);
    assert!(s["newton_iterations_mean"].as_f64().unwrap() <= 5.0);
    assert!(s["timing"]["linear_solve_seconds"].as_f64().is_some());
    assert_eq!(std::fs::read_dir(&snaps).unwrap().count(), 3);
}

#[test]
fn heat_reports_config_path_on_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"geometry": {"kind": "rectangle", "width": "wide"}}"#).unwrap();
    let out = vecfem()
        .arg("heat")
        .arg("--config")
        .arg(&cfg)
        .args(["--out", "a.csv", "--summary", "b.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("geometry"), "{err}");
}

#[test]
fn verify_exit_codes() {
    let ok = vecfem().args(["verify", "--suites", "AC2,AC8", "--seed", "7"]).output().unwrap();
    assert!(ok.status.success());
    let text = String::from_utf8(ok.stdout).unwrap();
    for id in ["AC1", "AC2", "AC3", "AC4", "AC5", "AC6", "AC7", "AC8"] {
        assert!(text.lines().any(|l| l.starts_with(id)), "{id} missing from\n{text}");
    }

    let bad = vecfem()
        .args(["verify", "--suites", "AC1,AC2", "--flip-conductivity-sign"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let text = String::from_utf8(bad.stdout).unwrap();
    assert!(text.contains("AC1 FAIL") && text.contains("AC2 FAIL"), "{text}");
}
