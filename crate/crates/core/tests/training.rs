use mirror_core::drift::{DriftKind, DriftSpec};
use mirror_core::env::EnvName;
use mirror_core::experiment::{
    export_trace, load_trace, run_training, verify_rows, verify_trace, write_csv, LoadedTrace,
    RunConfig, TraceFormat,
};
use mirror_core::mirror::SamplingSpec;
use mirror_core::neighbourhood::NeighbourhoodKind;

fn config(env: EnvName, drift: DriftKind, neigh: NeighbourhoodKind, iters: usize) -> RunConfig {
    RunConfig::new(env, DriftSpec::of(drift), neigh, iters).unwrap()
}

#[test]
fn single_step_trace_matches_hand_values() {
    let trace = run_training(&config(EnvName::SingleStep, DriftKind::Trivial, NeighbourhoodKind::Trivial, 5)).unwrap();
    let etas: Vec<f64> = trace.rows.iter().map(|r| r.eta).collect();
    // Uniform over rewards (10, 0, 1, 0, 5).
    assert!((etas[0] - 3.2).abs() < 1e-12);
    assert!(etas[1..].iter().all(|e| (e - 10.0).abs() < 1e-9));
}

#[test]
fn chain_kl_drift_ball_reaches_oracle() {
    let trace = run_training(&config(EnvName::Chain, DriftKind::Kl, NeighbourhoodKind::DriftBall, 200)).unwrap();
    assert!((trace.rows.last().unwrap().eta - trace.oracle_eta_star).abs() < 0.05);
    assert!(verify_trace(&trace, true).passed());
}

#[test]
fn gridworld_sq_tv_drift_stays_below_bound() {
    let trace = run_training(&config(EnvName::Gridworld, DriftKind::SqTv, NeighbourhoodKind::AvgKlBall, 60)).unwrap();
    for row in &trace.rows {
        assert!(row.cum_drift <= row.bound + 1e-8);
    }
    // Far below the return scale.
    assert!(trace.rows.last().unwrap().cum_drift < 1.0);
}

#[test]
fn rho_bar_sampling_keeps_guarantees() {
    let mut cfg = config(EnvName::Chain, DriftKind::SqL2, NeighbourhoodKind::DriftBall, 30);
    cfg.sampling = SamplingSpec::RhoBar;
    let trace = run_training(&cfg).unwrap();
    assert!(verify_trace(&trace, false).passed());
    // The running minimum only shrinks, so the bound only grows.
    for pair in trace.rows.windows(2) {
        assert!(pair[1].bound >= pair[0].bound);
    }
}

#[test]
fn csv_output_is_byte_identical_across_runs() {
    let cfg = config(EnvName::Gridworld, DriftKind::Kl, NeighbourhoodKind::DriftBall, 10);
    let render = || {
        let mut buf = Vec::new();
        write_csv(&run_training(&cfg).unwrap().rows, &mut buf).unwrap();
        buf
    };
    assert_eq!(render(), render());
}

#[test]
fn exports_round_trip_through_disk() {
    let cfg = config(EnvName::Random, DriftKind::ReverseKl, NeighbourhoodKind::ParamL2Ball, 5);
    let trace = run_training(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let csv = dir.path().join("t.csv");
    export_trace(&trace, TraceFormat::Csv, &csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 7);
    match load_trace(&csv).unwrap() {
        LoadedTrace::Rows(rows) => assert_eq!(rows, trace.rows),
        LoadedTrace::Full(_) => panic!("expected rows"),
    }

    let json = dir.path().join("t.json");
    export_trace(&trace, TraceFormat::Structured, &json).unwrap();
    let LoadedTrace::Full(back) = load_trace(&json).unwrap() else {
        panic!("expected a structured trace");
    };
    assert_eq!(*back, trace);
    assert_eq!(run_training(&back.config).unwrap(), trace);
}

#[test]
fn config_file_reproduces_run() {
    let cfg = config(EnvName::Chain, DriftKind::SqTv, NeighbourhoodKind::AvgKlBall, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let loaded = RunConfig::from_json_file(&path).unwrap();
    assert_eq!(run_training(&loaded).unwrap(), run_training(&cfg).unwrap());
}

#[test]
fn corrupted_rows_are_reported_per_check() {
    let trace = run_training(&config(EnvName::Chain, DriftKind::Kl, NeighbourhoodKind::AvgKlBall, 6)).unwrap();
    let mut rows = trace.rows.clone();
    rows[3].step_drift = -0.5;
    rows[5].cum_drift = rows[5].bound + 1.0;
    let report = verify_rows(&rows);
    let checks: Vec<(&str, Option<usize>)> =
        report.failures.iter().map(|f| (f.check.as_str(), f.iter)).collect();
    assert!(checks.contains(&("step_drift_sign", Some(3))));
    assert!(checks.contains(&("drift_bound", Some(5))));
    assert!(checks.contains(&("cum_drift_sum", Some(5))));
}
