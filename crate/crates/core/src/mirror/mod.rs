//! The mirror operator, the mirror-learning objective, its constrained
//! maximisation and sampled estimators of it.

mod estimator;
mod solver;

pub use estimator::{
    importance_term, monte_carlo_objective, off_policy_estimate, sample_batch, BufferEntry,
    McConvention, McEstimator, Sample,
};
pub use solver::{solve_update, SolveStatus, SolverConfig, UpdateResult};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::drift::{check_sampling, expected_drift, nu_over_beta, DriftReport, DriftSpec};
use crate::error::{Error, Result};
use crate::mdp::{discounted_visitation, dot, evaluate_policy, TabularMdp, ValueTables};
use crate::policy::TabularPolicy;

/// How the sampling distribution `beta_pi` is resolved from `pi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingSpec {
    /// Uniform over decision states.
    Uniform,
    /// Normalised discounted visitation of `pi`, restricted to decision states.
    RhoBar,
}

impl SamplingSpec {
    pub const ALL: [SamplingSpec; 2] = [Self::Uniform, Self::RhoBar];

    pub fn name(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::RhoBar => "rho-bar",
        }
    }

    /// Resolves `beta_pi`: positive on decision states, zero on terminals.
    pub fn resolve(self, mdp: &TabularMdp, pi: &TabularPolicy) -> Result<Vec<f64>> {
        let decision = mdp.decision_states();
        let mut beta = vec![0.0; mdp.num_states()];
        match self {
            Self::Uniform => {
                for &s in &decision {
                    beta[s] = 1.0 / decision.len() as f64;
                }
            }
            Self::RhoBar => {
                let rho = discounted_visitation(mdp, pi, true)?;
                let mass: f64 = decision.iter().map(|&s| rho[s]).sum();
                for &s in &decision {
                    beta[s] = rho[s] / mass;
                }
            }
        }
        check_sampling(mdp, &beta)?;
        Ok(beta)
    }
}

impl fmt::Display for SamplingSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplingSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::UnknownName {
                vocabulary: "sampling",
                name: s.to_string(),
            })
    }
}

/// Per-state mirror values `[M V_pi](s)` and the drift behind them.
#[derive(Debug, Clone)]
pub struct MirrorValues {
    pub per_state: Vec<f64>,
    pub drift: DriftReport,
    pub values: ValueTables,
}

/// `[M V_pi](s) = E_{a ~ pibar}[Q_pi(s, a)] - (nu(s) / beta(s)) D_pi(pibar | s)`
/// for every state, with `nu / beta = 0` where `beta = 0`.
///
/// The expectation is accumulated as `V_pi(s) + sum_a (pibar - pi) A_pi(s, a)`,
/// which equals `V_pi(s)` exactly at `pibar = pi`.
pub fn mirror_values(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pibar: &TabularPolicy,
    spec: &DriftSpec,
    beta: &[f64],
) -> Result<MirrorValues> {
    let drift = expected_drift(spec, mdp, pi, pibar, beta)?;
    let values = evaluate_policy(mdp, pi)?;
    let ratio = nu_over_beta(&drift.nu_weights, beta);
    let per_state = (0..mdp.num_states())
        .map(|s| {
            let shift: f64 = pibar
                .row(s)
                .iter()
                .zip(pi.row(s))
                .zip(values.adv_row(s))
                .map(|((q, p), a)| (q - p) * a)
                .sum();
            values.v[s] + shift - ratio[s] * drift.per_state[s]
        })
        .collect();
    Ok(MirrorValues {
        per_state,
        drift,
        values,
    })
}

/// `[M V_pi](s)` at a single state.
pub fn mirror_value(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pibar: &TabularPolicy,
    spec: &DriftSpec,
    beta: &[f64],
    s: usize,
) -> Result<f64> {
    if s >= mdp.num_states() {
        return Err(Error::DimensionMismatch {
            what: "state index",
            expected: mdp.num_states(),
            got: s,
        });
    }
    Ok(mirror_values(mdp, pi, pibar, spec, beta)?.per_state[s])
}

/// `E_{s ~ beta}[[M V_pi](s)]`, the quantity the mirror update maximises.
pub fn mirror_objective(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pibar: &TabularPolicy,
    spec: &DriftSpec,
    beta: &[f64],
) -> Result<f64> {
    let mv = mirror_values(mdp, pi, pibar, spec, beta)?;
    Ok(dot(beta, &mv.per_state))
}
