use serde::{Deserialize, Serialize};

use crate::drift::nu_over_beta;
use crate::error::{Error, Result};
use crate::experiment::config::RunConfig;
use crate::mdp::{dot, evaluate_policy, value_iteration, TabularMdp};
use crate::mirror::solve_update;
use crate::policy::{SoftmaxPolicy, TabularPolicy};

/// Tolerance of the value-iteration oracle.
pub const ORACLE_TOL: f64 = 1e-10;

/// Per-row tolerances enforced during training.
pub const MONOTONE_TOL: f64 = 1e-6;
pub const IMPROVEMENT_TOL: f64 = 1e-8;
pub const VALUE_GAIN_TOL: f64 = 1e-8;
pub const BOUND_TOL: f64 = 1e-8;
pub const DRIFT_SIGN_TOL: f64 = 1e-12;
pub const MARGIN_TOL: f64 = 1e-10;

/// One row of the exported trace. Row 0 describes the initial policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub eta: f64,
    /// Expected drift `D^nu_{pi_n}(pi_{n+1})` of the step into this row.
    pub step_drift: f64,
    pub cum_drift: f64,
    /// `(eta* - eta(pi_0)) / U_beta`.
    pub bound: f64,
    /// `min_s V_{pi_{n+1}}(s) - V_{pi_n}(s)` over decision states.
    pub min_value_gain: f64,
    pub solver_iters: usize,
    pub safeguards: usize,
}

/// Per-row quantities kept only in the structured export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDetail {
    /// `E_{s ~ d}[(nu(s) / beta(s)) D(s)]` of the step into this row.
    pub weighted_drift: f64,
    /// Running minimum of `min_s d(s) / beta(s)`.
    pub u_beta: f64,
    /// Neighbourhood margin of the step; `None` when unconstrained.
    pub margin: Option<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningTrace {
    pub config: RunConfig,
    pub rows: Vec<TraceRow>,
    pub details: Vec<RowDetail>,
    pub final_policy: TabularPolicy,
    pub final_logits: SoftmaxPolicy,
    pub oracle_eta_star: f64,
    pub oracle_values: Vec<f64>,
}

/// `min_s d(s) / beta(s)` over states with `beta(s) > 0`.
pub fn u_beta(mdp: &TabularMdp, beta: &[f64]) -> f64 {
    mdp.initial_dist()
        .iter()
        .zip(beta)
        .filter(|(_, &b)| b > 0.0)
        .map(|(d, b)| d / b)
        .fold(f64::INFINITY, f64::min)
}

/// Iterated mirror updates from the uniform policy, checking the
/// improvement guarantees after every step. The first violated check
/// aborts the run with a dump of all rows so far.
pub fn run_training(cfg: &RunConfig) -> Result<LearningTrace> {
    cfg.validate()?;
    let mdp = cfg.env.build(cfg.seed)?;
    let oracle = value_iteration(&mdp, ORACLE_TOL)?;
    let d = mdp.initial_dist().to_vec();
    let decision = mdp.decision_states();

    let mut logits = SoftmaxPolicy::zeros(mdp.num_states(), mdp.num_actions());
    let mut policy = logits.to_simplex()?;
    let mut values = evaluate_policy(&mdp, &policy)?.v;
    let eta0 = dot(&d, &values);
    let mut u = u_beta(&mdp, &cfg.sampling.resolve(&mdp, &policy)?);
    let bound = |u: f64| (oracle.eta_star - eta0).max(0.0) / u;

    let mut rows = vec![TraceRow {
        iter: 0,
        eta: eta0,
        step_drift: 0.0,
        cum_drift: 0.0,
        bound: bound(u),
        min_value_gain: 0.0,
        solver_iters: 0,
        safeguards: 0,
    }];
    let mut details = vec![RowDetail {
        weighted_drift: 0.0,
        u_beta: u,
        margin: None,
        values: values.clone(),
    }];

    for iter in 1..=cfg.iterations {
        let beta = cfg.sampling.resolve(&mdp, &policy)?;
        u = u.min(u_beta(&mdp, &beta));
        let res = solve_update(&mdp, &logits, &cfg.drift, &cfg.neighbourhood, &beta, &cfg.solver)?;
        let new_values = evaluate_policy(&mdp, &res.new_policy)?.v;
        let eta = dot(&d, &new_values);
        let prev = *rows.last().unwrap();
        let ratio = nu_over_beta(&res.drift_report.nu_weights, &beta);
        let weighted_drift: f64 = (0..d.len())
            .map(|s| d[s] * ratio[s] * res.drift_report.per_state[s])
            .sum();
        // Terminal values are pinned at zero.
        let min_value_gain = decision
            .iter()
            .map(|&s| new_values[s] - values[s])
            .fold(f64::INFINITY, f64::min);
        let row = TraceRow {
            iter,
            eta,
            step_drift: res.drift_report.expected,
            cum_drift: prev.cum_drift + res.drift_report.expected,
            bound: bound(u),
            min_value_gain,
            solver_iters: res.iterations,
            safeguards: res.safeguarded_states.len(),
        };
        rows.push(row);
        details.push(RowDetail {
            weighted_drift,
            u_beta: u,
            margin: res.margin.is_finite().then_some(res.margin),
            values: new_values.clone(),
        });

        let gap = eta - prev.eta;
        let checks = [
            (gap >= -MONOTONE_TOL, format!("return decreased by {}", -gap)),
            (
                gap >= weighted_drift - IMPROVEMENT_TOL,
                format!("return gain {gap} below weighted drift {weighted_drift}"),
            ),
            (
                min_value_gain >= -VALUE_GAIN_TOL,
                format!("a state value fell by {}", -min_value_gain),
            ),
            (
                row.cum_drift <= row.bound + BOUND_TOL,
                format!("cumulative drift {} above bound {}", row.cum_drift, row.bound),
            ),
            (
                row.step_drift >= -DRIFT_SIGN_TOL,
                format!("negative step drift {}", row.step_drift),
            ),
            (
                res.margin >= -MARGIN_TOL,
                format!("left the neighbourhood (margin {})", res.margin),
            ),
        ];
        if let Some((_, message)) = checks.into_iter().find(|(ok, _)| !ok) {
            return Err(Error::InvariantViolation {
                iter,
                message,
                dump: dump_rows(&rows),
            });
        }

        logits = res.new_logits;
        policy = res.new_policy;
        values = new_values;
    }

    Ok(LearningTrace {
        config: cfg.clone(),
        rows,
        details,
        final_policy: policy,
        final_logits: logits,
        oracle_eta_star: oracle.eta_star,
        oracle_values: oracle.values.v,
    })
}

fn dump_rows(rows: &[TraceRow]) -> String {
    let mut out = String::from("iter,eta,step_drift,cum_drift,bound,min_value_gain,solver_iters,safeguards\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?},{},{}\n",
            r.iter, r.eta, r.step_drift, r.cum_drift, r.bound, r.min_value_gain, r.solver_iters, r.safeguards
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DriftKind, DriftSpec};
    use crate::env::EnvName;
    use crate::mdp::greedy_step;
    use crate::neighbourhood::NeighbourhoodKind;

    #[test]
    fn single_step_gpi_trace() {
        let cfg = RunConfig::new(
            EnvName::SingleStep,
            DriftSpec::trivial(),
            NeighbourhoodKind::Trivial,
            5,
        )
        .unwrap();
        let trace = run_training(&cfg).unwrap();
        let etas: Vec<f64> = trace.rows.iter().map(|r| r.eta).collect();
        assert!((etas[0] - 3.2).abs() < 1e-12);
        for eta in &etas[1..] {
            assert!((eta - 10.0).abs() < 1e-9);
        }
        assert_eq!(trace.rows.len(), 6);
    }

    #[test]
    fn trivial_run_follows_greedy_iteration() {
        let mut cfg = RunConfig::new(
            EnvName::Random,
            DriftSpec::trivial(),
            NeighbourhoodKind::Trivial,
            4,
        )
        .unwrap();
        cfg.seed = 3;
        let mdp = cfg.env.build(cfg.seed).unwrap();
        let mut oracle = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
        for n in 1..=4 {
            cfg.iterations = n;
            let trace = run_training(&cfg).unwrap();
            oracle = greedy_step(&mdp, &oracle).unwrap();
            assert_eq!(trace.final_policy.argmax_actions(), oracle.argmax_actions(), "iteration {n}");
        }
    }

    #[test]
    fn chain_kl_rises_monotonically() {
        let cfg = RunConfig::new(
            EnvName::Chain,
            DriftSpec::of(DriftKind::Kl),
            NeighbourhoodKind::DriftBall,
            20,
        )
        .unwrap();
        let trace = run_training(&cfg).unwrap();
        for pair in trace.rows.windows(2) {
            assert!(pair[1].eta >= pair[0].eta - MONOTONE_TOL);
        }
        assert!(trace.rows.last().unwrap().eta > trace.rows[0].eta);
    }
}
