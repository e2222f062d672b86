//! Sampled estimators of the mirror objective: the on-policy batch
//! estimator and its replay-buffer variant with per-entry behaviour
//! probabilities.

use rand::distr::weighted::WeightedIndex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::drift::{check_sampling, expected_drift, nu_over_beta, DriftSpec};
use crate::error::{Error, Result};
use crate::mdp::{evaluate_policy, TabularMdp, ValueTables};
use crate::policy::TabularPolicy;

/// A state drawn from `beta` and an action drawn from the old policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub state: usize,
    pub action: usize,
}

/// Which action-value the batch estimator weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McConvention {
    /// `(pibar / pi) Q`; unbiased for the mirror objective.
    Q,
    /// `(pibar / pi) A`; unbiased for the mirror objective minus `E_beta[V]`.
    Advantage,
}

/// Per-sample terms `(pibar(a|s) / pi(a|s)) X(s, a) - (nu(s) / beta(s)) D(s)`
/// with `X` either `Q_pi` or `A_pi`.
#[derive(Debug, Clone)]
pub struct McEstimator {
    na: usize,
    pi: TabularPolicy,
    pibar: TabularPolicy,
    values: ValueTables,
    /// `(nu / beta) D` per state.
    penalty: Vec<f64>,
    beta: Vec<f64>,
    convention: McConvention,
}

impl McEstimator {
    pub fn new(
        mdp: &TabularMdp,
        pi: &TabularPolicy,
        pibar: &TabularPolicy,
        spec: &DriftSpec,
        beta: &[f64],
        convention: McConvention,
    ) -> Result<Self> {
        let report = expected_drift(spec, mdp, pi, pibar, beta)?;
        let ratio = nu_over_beta(&report.nu_weights, beta);
        let penalty = ratio.iter().zip(&report.per_state).map(|(r, d)| r * d).collect();
        Ok(Self {
            na: mdp.num_actions(),
            pi: pi.clone(),
            pibar: pibar.clone(),
            values: evaluate_policy(mdp, pi)?,
            penalty,
            beta: beta.to_vec(),
            convention,
        })
    }

    /// Estimator term for one sample.
    pub fn term(&self, sample: Sample) -> Result<f64> {
        let Sample { state: s, action: a } = sample;
        if s >= self.beta.len() || a >= self.na {
            return Err(Error::DimensionMismatch {
                what: "sample",
                expected: self.beta.len() * self.na,
                got: s * self.na + a,
            });
        }
        let p = self.pi.prob(s, a);
        if p <= 0.0 {
            return Err(Error::CorruptBuffer { index: s * self.na + a, prob: p });
        }
        let x = match self.convention {
            McConvention::Q => self.values.q(s, a),
            McConvention::Advantage => self.values.adv(s, a),
        };
        Ok(self.pibar.prob(s, a) / p * x - self.penalty[s])
    }

    /// Batch mean of [`McEstimator::term`].
    pub fn estimate(&self, batch: &[Sample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut total = 0.0;
        for &sample in batch {
            total += self.term(sample)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Exact expectation of one term under `s ~ beta`, `a ~ pi`.
    pub fn exact_mean(&self) -> f64 {
        let mut total = 0.0;
        for s in 0..self.beta.len() {
            for a in 0..self.na {
                let w = self.beta[s] * self.pi.prob(s, a);
                if w > 0.0 {
                    total += w * self.term(Sample { state: s, action: a }).unwrap();
                }
            }
        }
        total
    }
}

/// Batch estimate of the mirror objective from samples `s ~ beta`, `a ~ pi`.
pub fn monte_carlo_objective(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pibar: &TabularPolicy,
    spec: &DriftSpec,
    beta: &[f64],
    batch: &[Sample],
    convention: McConvention,
) -> Result<f64> {
    McEstimator::new(mdp, pi, pibar, spec, beta, convention)?.estimate(batch)
}

/// Draws `n` samples with `s ~ beta` and `a ~ pi(.|s)`, seeded.
pub fn sample_batch(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    beta: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    check_sampling(mdp, beta)?;
    pi.check_shape(mdp.num_states(), mdp.num_actions())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = WeightedIndex::new(beta)
        .map_err(|e| Error::InvalidDistribution(format!("sampling distribution: {e}")))?;
    let actions: Vec<Option<WeightedIndex<f64>>> = (0..mdp.num_states())
        .map(|s| WeightedIndex::new(pi.row(s)).ok())
        .collect();
    Ok((0..n)
        .map(|_| {
            let state = states.sample(&mut rng);
            let action = actions[state]
                .as_ref()
                .expect("policy rows are distributions")
                .sample(&mut rng);
            Sample { state, action }
        })
        .collect())
}

/// Replay-buffer entry: the behaviour probability `pi_hist(a|s)` of the
/// policy that inserted it and the old action value `Q_old(s, a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub state: usize,
    pub action: usize,
    pub hist_prob: f64,
    pub q_value: f64,
}

/// `(pibar(a|s) / pi_hist(a|s)) Q_old(s, a)` for one buffer entry.
pub fn importance_term(pibar: &TabularPolicy, entry: &BufferEntry, index: usize) -> Result<f64> {
    if !(entry.hist_prob > 0.0 && entry.hist_prob <= 1.0) {
        return Err(Error::CorruptBuffer {
            index,
            prob: entry.hist_prob,
        });
    }
    if entry.state >= pibar.num_states() || entry.action >= pibar.num_actions() {
        return Err(Error::DimensionMismatch {
            what: "buffer entry",
            expected: pibar.num_states() * pibar.num_actions(),
            got: entry.state * pibar.num_actions() + entry.action,
        });
    }
    Ok(pibar.prob(entry.state, entry.action) / entry.hist_prob * entry.q_value)
}

/// Importance-weighted mean over a replay buffer whose states were drawn
/// from `beta`; unbiased for `E_{s ~ beta, a ~ pibar}[Q_old(s, a)]` whatever
/// mixture of behaviour policies filled the buffer.
pub fn off_policy_estimate(
    mdp: &TabularMdp,
    pibar: &TabularPolicy,
    buffer: &[BufferEntry],
    beta: &[f64],
) -> Result<f64> {
    check_sampling(mdp, beta)?;
    pibar.check_shape(mdp.num_states(), mdp.num_actions())?;
    if buffer.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (i, entry) in buffer.iter().enumerate() {
        total += importance_term(pibar, entry, i)?;
    }
    Ok(total / buffer.len() as f64)
}
