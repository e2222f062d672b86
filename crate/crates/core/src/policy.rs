//! Policy representations and the statistical divergences shared by drifts
//! and neighbourhoods.
//!
//! A [`TabularPolicy`] stores one probability row per state. A
//! [`SoftmaxPolicy`] stores `num_actions - 1` logits per state; the last
//! logit is pinned at zero, so the parameterisation is one-to-one with the
//! interior of the simplex.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Floor applied to probabilities before they enter a logarithm or a ratio.
pub const PROB_FLOOR: f64 = 1e-12;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidDistribution(
                "policy needs at least one state and one action".into(),
            ));
        }
        if probs.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch {
                what: "policy table",
                expected: num_states * num_actions,
                got: probs.len(),
            });
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            check_distribution(row, ROW_SUM_TOL)
                .map_err(|e| Error::InvalidDistribution(format!("policy row {s}: {e}")))?;
        }
        Ok(Self {
            num_states,
            num_actions,
            probs,
        })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        Self {
            num_states,
            num_actions,
            probs: vec![p; num_states * num_actions],
        }
    }

    /// Point mass on `actions[s]` at every state.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::DimensionMismatch {
                    what: "action index",
                    expected: num_actions,
                    got: a,
                });
            }
            probs[s * num_actions + a] = 1.0;
        }
        Self::new(actions.len(), num_actions, probs)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    /// Most probable action at `s`; ties go to the lowest index.
    pub fn argmax(&self, s: usize) -> usize {
        argmax_lowest(self.row(s))
    }

    pub fn argmax_actions(&self) -> Vec<usize> {
        (0..self.num_states).map(|s| self.argmax(s)).collect()
    }

    pub(crate) fn check_shape(&self, num_states: usize, num_actions: usize) -> Result<()> {
        if self.num_states != num_states {
            return Err(Error::DimensionMismatch {
                what: "policy states",
                expected: num_states,
                got: self.num_states,
            });
        }
        if self.num_actions != num_actions {
            return Err(Error::DimensionMismatch {
                what: "policy actions",
                expected: num_actions,
                got: self.num_actions,
            });
        }
        Ok(())
    }
}

/// Softmax-parameterised policy with the last logit of every row fixed at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    num_states: usize,
    num_actions: usize,
    logits: Vec<f64>,
}

impl SoftmaxPolicy {
    /// All-zero logits, i.e. the uniform policy.
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            logits: vec![0.0; num_states * (num_actions - 1)],
        }
    }

    pub fn new(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::InvalidDistribution("zero actions".into()));
        }
        let width = num_actions - 1;
        if logits.len() != num_states * width {
            return Err(Error::DimensionMismatch {
                what: "logit table",
                expected: num_states * width,
                got: logits.len(),
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            logits,
        })
    }

    /// Inverse of [`to_simplex`](Self::to_simplex) on the interior of the simplex.
    pub fn from_policy(policy: &TabularPolicy) -> Result<Self> {
        let na = policy.num_actions();
        let mut logits = Vec::with_capacity(policy.num_states() * (na - 1));
        for s in 0..policy.num_states() {
            let row = policy.row(s);
            if row.iter().any(|&p| p <= 0.0) {
                return Err(Error::InvalidDistribution(format!(
                    "row {s} is on the simplex boundary and has no logits"
                )));
            }
            let last = row[na - 1].ln();
            logits.extend(row[..na - 1].iter().map(|p| p.ln() - last));
        }
        Self::new(policy.num_states(), na, logits)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn row(&self, s: usize) -> &[f64] {
        let w = self.num_actions - 1;
        &self.logits[s * w..(s + 1) * w]
    }

    pub fn to_simplex(&self) -> Result<TabularPolicy> {
        for (i, l) in self.logits.iter().enumerate() {
            if !l.is_finite() {
                let w = (self.num_actions - 1).max(1);
                return Err(Error::NonFiniteLogit {
                    state: i / w,
                    index: i % w,
                });
            }
        }
        let mut probs = vec![0.0; self.num_states * self.num_actions];
        for (s, out) in probs.chunks_mut(self.num_actions).enumerate() {
            softmax_row(self.row(s), out);
        }
        Ok(TabularPolicy {
            num_states: self.num_states,
            num_actions: self.num_actions,
            probs,
        })
    }
}

/// `out = softmax(logits ++ [0])` with max-subtraction.
pub(crate) fn softmax_row(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), logits.len() + 1);
    let max = logits.iter().copied().fold(0.0_f64, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits.iter().chain(std::iter::once(&0.0))) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub(crate) fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_distribution(p: &[f64], tol: f64) -> std::result::Result<(), String> {
    if let Some(x) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(format!("entry {x} is negative or non-finite"));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// Statistical divergences between two action distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    /// `KL(p || q)`; `p` is the old policy row.
    Kl,
    /// `KL(q || p)`.
    ReverseKl,
    /// `sum (p - q)^2`.
    SqL2,
    /// `(0.5 * sum |p - q|)^2`.
    SqTv,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 4] = [Self::Kl, Self::ReverseKl, Self::SqL2, Self::SqTv];

    pub fn name(self) -> &'static str {
        match self {
            Self::Kl => "kl",
            Self::ReverseKl => "reverse_kl",
            Self::SqL2 => "sq_l2",
            Self::SqTv => "sq_tv",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::UnknownName {
                vocabulary: "divergence",
                name: s.to_string(),
            })
    }
}

/// Divergence of `q` from `p`; `p` plays the role of the old policy.
pub fn divergence(kind: DivergenceKind, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            what: "distribution length",
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(divergence_unchecked(kind, p, q))
}

pub(crate) fn divergence_unchecked(kind: DivergenceKind, p: &[f64], q: &[f64]) -> f64 {
    match kind {
        DivergenceKind::Kl => kl(p, q),
        DivergenceKind::ReverseKl => kl(q, p),
        DivergenceKind::SqL2 => p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(),
        DivergenceKind::SqTv => {
            let tv = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
            tv * tv
        }
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(&a, &b)| a * (a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln()))
        .sum()
}

/// Gradient of `divergence(kind, p, q)` with respect to `q`, written into `out`.
///
/// `SqTv` uses the subgradient with `sign(0) = 0`.
pub(crate) fn divergence_grad_q(kind: DivergenceKind, p: &[f64], q: &[f64], out: &mut [f64]) {
    match kind {
        DivergenceKind::Kl => {
            for ((o, &a), &b) in out.iter_mut().zip(p).zip(q) {
                *o = if a > 0.0 { -a / b.max(PROB_FLOOR) } else { 0.0 };
            }
        }
        DivergenceKind::ReverseKl => {
            for ((o, &a), &b) in out.iter_mut().zip(p).zip(q) {
                *o = if b > 0.0 {
                    b.max(PROB_FLOOR).ln() - a.max(PROB_FLOOR).ln() + 1.0
                } else {
                    0.0
                };
            }
        }
        DivergenceKind::SqL2 => {
            for ((o, &a), &b) in out.iter_mut().zip(p).zip(q) {
                *o = 2.0 * (b - a);
            }
        }
        DivergenceKind::SqTv => {
            let tv = 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>();
            for ((o, &a), &b) in out.iter_mut().zip(p).zip(q) {
                let d = b - a;
                *o = if d > 0.0 {
                    tv
                } else if d < 0.0 {
                    -tv
                } else {
                    0.0
                };
            }
        }
    }
}

/// Largest per-state divergence between two policies.
pub fn policy_metric(pi1: &TabularPolicy, pi2: &TabularPolicy, kind: DivergenceKind) -> Result<f64> {
    pi2.check_shape(pi1.num_states(), pi1.num_actions())?;
    Ok((0..pi1.num_states())
        .map(|s| divergence_unchecked(kind, pi1.row(s), pi2.row(s)))
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_give_uniform_rows() {
        let p = SoftmaxPolicy::zeros(2, 5).to_simplex().unwrap();
        for &x in p.probs() {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_softmax() {
        let sp = SoftmaxPolicy::new(1, 3, vec![2f64.ln(), 0.0]).unwrap();
        let p = sp.to_simplex().unwrap();
        let expected = [0.5, 0.25, 0.25];
        for (a, b) in p.row(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_logits_are_rejected() {
        let sp = SoftmaxPolicy::new(2, 2, vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(
            sp.to_simplex(),
            Err(Error::NonFiniteLogit { state: 1, index: 0 })
        ));
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let sp = SoftmaxPolicy::new(1, 3, vec![1e4, -1e4]).unwrap();
        let p = sp.to_simplex().unwrap();
        assert!((p.prob(0, 0) - 1.0).abs() < 1e-15);
        assert!(p.row(0).iter().all(|x| x.is_finite()));
    }

    #[test]
    fn divergence_examples() {
        for kind in DivergenceKind::ALL {
            let p = [0.3, 0.7];
            assert_eq!(divergence(kind, &p, &p).unwrap(), 0.0, "{kind}");
        }
        assert_eq!(divergence(DivergenceKind::SqL2, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        // 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75), evaluated term by term.
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        let got = divergence(DivergenceKind::Kl, &[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.143841).abs() < 1e-6);
        let rev = divergence(DivergenceKind::ReverseKl, &[0.5, 0.5], &[0.25, 0.75]).unwrap();
        let rev_expected = 0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln();
        assert!((rev - rev_expected).abs() < 1e-15);
        let tv = divergence(DivergenceKind::SqTv, &[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((tv - 0.25).abs() < 1e-15);
    }

    #[test]
    fn divergence_dimension_mismatch() {
        assert!(matches!(
            divergence(DivergenceKind::Kl, &[1.0], &[0.5, 0.5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn metric_is_max_over_states() {
        let a = TabularPolicy::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let b = TabularPolicy::new(2, 2, vec![0.5, 0.5, 0.9, 0.1]).unwrap();
        assert_eq!(policy_metric(&a, &a, DivergenceKind::SqL2).unwrap(), 0.0);
        let one = divergence(DivergenceKind::SqL2, a.row(1), b.row(1)).unwrap();
        assert_eq!(policy_metric(&a, &b, DivergenceKind::SqL2).unwrap(), one);
    }

    #[test]
    fn invalid_rows_are_rejected() {
        assert!(TabularPolicy::new(1, 2, vec![0.6, 0.6]).is_err());
        assert!(TabularPolicy::new(1, 2, vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn boundary_policy_has_no_logits() {
        let p = TabularPolicy::deterministic(2, &[0]).unwrap();
        assert!(SoftmaxPolicy::from_policy(&p).is_err());
    }

    #[test]
    fn names_parse_with_either_separator() {
        assert_eq!("reverse-kl".parse::<DivergenceKind>().unwrap(), DivergenceKind::ReverseKl);
        assert_eq!("sq_tv".parse::<DivergenceKind>().unwrap(), DivergenceKind::SqTv);
        assert!("l1".parse::<DivergenceKind>().is_err());
    }
}
