use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shapley-gla"))
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

fn run(args: &[&str], config: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).output().unwrap()
}

#[test]
fn exact_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"model": {"linear": {"intercept": 0.0, "coeffs": [1.0, 1.0]}}, "cov": [[1.0, 0.0], [0.0, 4.0]]}"#,
    );
    let out = dir.path().join("exact.csv");
    let o = run(&["exact", "--out", out.to_str().unwrap()], &cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..4], &["exact", "exact", "1", "0"]);
    assert!((row[4].parse::<f64>().unwrap() - 0.2).abs() < 1e-12);
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("exact.config.json")).unwrap()).unwrap();
    assert_eq!(sidecar["experiment"], "custom");
    assert_eq!(sidecar["output"], out.to_str().unwrap());
}

#[test]
fn linearize_defaults_to_three_surrogates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"model": "fig1", "mean": [1, 0, 2, 1], "cov": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}"#,
    );
    let o = run(&["linearize"], &cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let methods: Vec<&str> = stdout.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(methods, ["taylor", "finite_diff", "regression"]);
}

#[test]
fn unknown_key_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n_grid": [2], "replicatse": 3}"#);
    let o = run(&["fig1"], &cfg);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicatse"));
}

#[test]
fn bad_flags_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{}");
    assert_eq!(run(&["fig1", "--threads", "0"], &cfg).status.code(), Some(1));
    assert_eq!(run(&["fig1", "--budget-scale", "-1"], &cfg).status.code(), Some(1));
    assert_eq!(bin().arg("fig1").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn degenerate_base_is_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"n_grid": [20], "replicates": 1, "methods": ["gla"], "empirical": {"sampler": {"constant": {"value": [1, 2]}}}}"#,
    );
    assert_eq!(run(&["empirical42"], &cfg).status.code(), Some(3));
}

#[test]
fn fig1_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"n_grid": [2, 4], "replicates": 3, "perm": {"n_var": 1000, "n_perms": 10, "n_inner": 3}, "record_timing": false}"#,
    );
    let csv = |threads: &str| {
        let out = dir.path().join(format!("fig1_{threads}.csv"));
        let o = run(&["fig1", "--seed", "11", "--threads", threads, "--out", out.to_str().unwrap()], &cfg);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let one = csv("1");
    assert_eq!(one, csv("8"));
    assert_eq!(String::from_utf8(one).unwrap().lines().count(), 1 + 2 * 3 * 4);
}

#[test]
fn remark1_scaled_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n_grid": [2, 8], "methods": ["analytic", "gap"]}"#);
    let o = run(&["remark1"], &cfg);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    let gaps: Vec<f64> = stdout
        .lines()
        .filter(|l| l.contains(",gap,"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(gaps.len(), 2);
    assert!((gaps[0] - 1.0).abs() < 1e-12 && (gaps[1] - 1.6).abs() < 1e-12);
}

#[test]
fn acceptance_exit_codes_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let cfg = write_config(dir.path(), r#"{"acceptance": {"criteria": ["A2", "A5"]}}"#);
    let o = run(&["acceptance", "--out", report.to_str().unwrap()], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let ids: Vec<&str> = json["criteria"].as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["A2", "A5"]);

    let cfg = write_config(dir.path(), r#"{"acceptance": {"criteria": ["A2"], "fault_weight": 2}}"#);
    let o = run(&["acceptance"], &cfg);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL A2"));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["passed"], false);
}
