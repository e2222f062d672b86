use serde::{Deserialize, Serialize};

use crate::env::EnvName;
use crate::experiment::train::{
    LearningTrace, TraceRow, BOUND_TOL, DRIFT_SIGN_TOL, IMPROVEMENT_TOL, MONOTONE_TOL,
    VALUE_GAIN_TOL,
};

/// Tolerance on `|cum_drift_n - cum_drift_{n-1} - step_drift_n|`.
const CUMSUM_TOL: f64 = 1e-9;

/// Final-iterate tolerances on `|eta - eta*|` and `max_s |V - V*|`.
pub fn convergence_tolerance(env: EnvName) -> (f64, f64) {
    match env {
        EnvName::SingleStep => (1e-6, 1e-6),
        EnvName::Chain => (0.05, 0.1),
        EnvName::Gridworld => (0.1, 0.5),
        EnvName::Bandit | EnvName::Random => (1e-3, 1e-2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFailure {
    /// Row index, or `None` for whole-trace checks.
    pub iter: Option<usize>,
    pub check: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<String>,
    pub failures: Vec<TraceFailure>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn ran(&mut self, check: &str) {
        if !self.checks.iter().any(|c| c == check) {
            self.checks.push(check.to_string());
        }
    }

    fn fail(&mut self, iter: Option<usize>, check: &str, detail: String) {
        self.failures.push(TraceFailure {
            iter,
            check: check.to_string(),
            detail,
        });
    }
}

/// Checks that need only the CSV columns: monotone return, non-negative
/// step drift, consistent running sum, per-state value gain, and the
/// cumulative drift bound.
pub fn verify_rows(rows: &[TraceRow]) -> VerificationReport {
    let mut report = VerificationReport::default();
    for check in ["monotonicity", "step_drift_sign", "cum_drift_sum", "value_gain", "drift_bound"] {
        report.ran(check);
    }
    if rows.is_empty() {
        report.fail(None, "rows", "trace has no rows".into());
        return report;
    }
    for (i, row) in rows.iter().enumerate() {
        if row.iter != i {
            report.fail(Some(i), "rows", format!("row {i} is labelled {}", row.iter));
        }
        if row.cum_drift > row.bound + BOUND_TOL {
            report.fail(
                Some(i),
                "drift_bound",
                format!("cum_drift {} > bound {}", row.cum_drift, row.bound),
            );
        }
        if i == 0 {
            continue;
        }
        let prev = &rows[i - 1];
        if row.eta < prev.eta - MONOTONE_TOL {
            report.fail(Some(i), "monotonicity", format!("eta {} -> {}", prev.eta, row.eta));
        }
        if row.step_drift < -DRIFT_SIGN_TOL {
            report.fail(Some(i), "step_drift_sign", format!("step_drift {}", row.step_drift));
        }
        if (row.cum_drift - prev.cum_drift - row.step_drift).abs() > CUMSUM_TOL {
            report.fail(
                Some(i),
                "cum_drift_sum",
                format!("{} + {} != {}", prev.cum_drift, row.step_drift, row.cum_drift),
            );
        }
        if row.min_value_gain < -VALUE_GAIN_TOL {
            report.fail(Some(i), "value_gain", format!("min_value_gain {}", row.min_value_gain));
        }
    }
    report
}

/// All row checks plus the per-step improvement inequalities and, when
/// `check_convergence` is set, closeness of the last iterate to the oracle.
pub fn verify_trace(trace: &LearningTrace, check_convergence: bool) -> VerificationReport {
    let mut report = verify_rows(&trace.rows);
    report.ran("property_1");
    report.ran("edge_bound");
    if trace.details.len() != trace.rows.len() {
        report.fail(None, "rows", "row details do not match rows".into());
        return report;
    }
    for i in 1..trace.rows.len() {
        let gap = trace.rows[i].eta - trace.rows[i - 1].eta;
        let detail = &trace.details[i];
        if gap < detail.weighted_drift - IMPROVEMENT_TOL {
            report.fail(
                Some(i),
                "property_1",
                format!("gain {gap} < weighted drift {}", detail.weighted_drift),
            );
        }
        let edge = detail.u_beta * trace.rows[i].step_drift;
        if gap < edge - IMPROVEMENT_TOL {
            report.fail(Some(i), "edge_bound", format!("gain {gap} < U_beta * drift {edge}"));
        }
    }
    if check_convergence {
        report.ran("convergence");
        let (eta_tol, v_tol) = convergence_tolerance(trace.config.env);
        let last = trace.rows.last().unwrap();
        let eta_err = (last.eta - trace.oracle_eta_star).abs();
        if eta_err > eta_tol {
            report.fail(
                None,
                "convergence",
                format!("|eta - eta*| = {eta_err} > {eta_tol}"),
            );
        }
        let values = &trace.details.last().unwrap().values;
        let v_err = values
            .iter()
            .zip(&trace.oracle_values)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if v_err > v_tol {
            report.fail(None, "convergence", format!("max |V - V*| = {v_err} > {v_tol}"));
        }
    }
    report
}
