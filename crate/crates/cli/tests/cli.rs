use std::path::Path;
use std::process::{Command, Output};

fn mirror(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mirror"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn oracle_prints_optimal_return() {
    let out = mirror(&["oracle", "--env", "single-step"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let eta: f64 = text.lines().next().unwrap().strip_prefix("eta_star ").unwrap().parse().unwrap();
    assert!((eta - 10.0).abs() < 1e-9);
}

#[test]
fn run_writes_csv_to_stdout() {
    let out = mirror(&[
        "run", "--env", "single-step", "--drift", "trivial", "--neigh", "trivial", "--iters", "2",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iter,eta,step_drift,cum_drift,bound,min_value_gain,solver_iters,safeguards");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("1,10.0,"));
}

#[test]
fn run_then_verify_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let json = dir.path().join("trace.json");
    let base = ["run", "--env", "chain", "--drift", "sq-l2", "--neigh", "drift_ball", "--iters", "40"];
    let out = mirror(&[&base[..], &["--out", csv.to_str().unwrap()]].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = mirror(&[&base[..], &["--out", json.to_str().unwrap(), "--format", "structured"]].concat());
    assert!(out.status.success());

    let out = mirror(&["verify", "--trace", csv.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("monotonicity: ok"));
    let out = mirror(&["verify", "--trace", json.to_str().unwrap(), "--convergence"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("convergence: ok"));
}

#[test]
fn verify_fails_on_corrupted_trace() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let out = mirror(&[
        "run", "--env", "chain", "--drift", "kl", "--neigh", "avg_kl_ball", "--iters", "3",
        "--out", csv.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut cells: Vec<String> = lines[3].split(',').map(str::to_string).collect();
    cells[1] = "-100.0".into();
    lines[3] = cells.join(",");
    std::fs::write(&csv, lines.join("\n") + "\n").unwrap();

    let out = mirror(&["verify", "--trace", csv.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stdout(&out).contains("FAIL monotonicity at iteration 2"));
}

#[test]
fn config_file_matches_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
            "env": "gridworld",
            "drift": {"kind": "sq_tv", "coeff": 1.0, "clip_epsilon": null, "nu_kind": "match_beta"},
            "neighbourhood": {"kind": "avg_kl_ball", "radius": 0.01, "drift_ref": null},
            "sampling": "uniform",
            "iterations": 3
        }"#,
    )
    .unwrap();
    let from_file = mirror(&["run", "--config", cfg.to_str().unwrap()]);
    let from_flags = mirror(&[
        "run", "--env", "gridworld", "--drift", "sq_tv", "--neigh", "avg_kl_ball", "--iters", "3",
    ]);
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, from_flags.stdout);
}

#[test]
fn dag_exports_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("dag");
    let out = mirror(&[
        "dag", "--env", "bandit", "--grid-step", "0.25", "--drift", "kl", "--neigh", "trivial",
        "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("vertices 5 edges 10"));
    let read = |name: &str| std::fs::read_to_string(Path::new(&out_dir).join(name)).unwrap();
    assert_eq!(read("vertices.csv").lines().count(), 6);
    assert_eq!(read("edges.csv").lines().count(), 11);
}

#[test]
fn bad_usage_is_rejected() {
    assert!(!mirror(&["run", "--env", "chain", "--drift", "nope", "--neigh", "trivial", "--iters", "2"]).status.success());
    assert!(!mirror(&["run", "--env", "chain", "--drift", "kl", "--neigh", "trivial", "--iters", "0"]).status.success());
    assert!(!mirror(&["run", "--env", "chain", "--drift", "kl", "--clip-eps", "0.1", "--neigh", "trivial", "--iters", "2"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let out = mirror(&[
        "dag", "--env", "random", "--grid-step", "0.01", "--drift", "kl", "--neigh", "trivial",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}
