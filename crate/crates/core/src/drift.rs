//! Drift functionals `D_pi(pibar | s)`, their state weightings `nu`, and a
//! numerical validity check (nonnegativity and zero directional derivative
//! at `pibar = pi`).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::flat_dirichlet;
use crate::error::{Error, Result};
use crate::mdp::{discounted_visitation, dot, evaluate_policy, TabularMdp};
use crate::policy::{
    argmax_lowest, check_distribution, divergence_grad_q, divergence_unchecked, DivergenceKind,
    TabularPolicy, PROB_FLOOR,
};

pub const DEFAULT_CLIP_EPSILON: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// Identically zero.
    Trivial,
    /// `KL(pi || pibar)`.
    Kl,
    /// `KL(pibar || pi)`.
    ReverseKl,
    SqL2,
    SqTv,
    /// Penalty recovering the clipped surrogate objective.
    PpoClip,
    /// `(1 - gamma) C_pi KL(pi || pibar)` with `C_pi = 4 gamma max|A_pi| / (1 - gamma)^2`.
    TrlMaxKl,
}

impl DriftKind {
    pub const ALL: [DriftKind; 7] = [
        Self::Trivial,
        Self::Kl,
        Self::ReverseKl,
        Self::SqL2,
        Self::SqTv,
        Self::PpoClip,
        Self::TrlMaxKl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Trivial => "trivial",
            Self::Kl => "kl",
            Self::ReverseKl => "reverse_kl",
            Self::SqL2 => "sq_l2",
            Self::SqTv => "sq_tv",
            Self::PpoClip => "ppo_clip",
            Self::TrlMaxKl => "trl_max_kl",
        }
    }

    /// The divergence a kind is built from, if any.
    pub fn divergence(self) -> Option<DivergenceKind> {
        match self {
            Self::Kl | Self::TrlMaxKl => Some(DivergenceKind::Kl),
            Self::ReverseKl => Some(DivergenceKind::ReverseKl),
            Self::SqL2 => Some(DivergenceKind::SqL2),
            Self::SqTv => Some(DivergenceKind::SqTv),
            Self::Trivial | Self::PpoClip => None,
        }
    }

    pub fn default_nu(self) -> NuKind {
        if self == Self::TrlMaxKl {
            NuKind::DiracMax
        } else {
            NuKind::MatchBeta
        }
    }
}

impl fmt::Display for DriftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DriftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::UnknownName {
                vocabulary: "drift",
                name: s.to_string(),
            })
    }
}

/// State weighting `nu` of a drift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuKind {
    /// `nu = beta`, so `nu / beta = 1`.
    MatchBeta,
    /// Normalised discounted visitation of the old policy.
    RhoBar,
    /// Point mass on the decision state with the largest drift.
    DiracMax,
}

impl NuKind {
    pub const ALL: [NuKind; 3] = [Self::MatchBeta, Self::RhoBar, Self::DiracMax];

    pub fn name(self) -> &'static str {
        match self {
            Self::MatchBeta => "match_beta",
            Self::RhoBar => "rho_bar",
            Self::DiracMax => "dirac_max",
        }
    }
}

impl FromStr for NuKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::UnknownName {
                vocabulary: "state weighting",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub kind: DriftKind,
    /// Non-negative scale applied to every kind.
    pub coeff: f64,
    /// Clip range; present iff `kind` is `PpoClip`.
    pub clip_epsilon: Option<f64>,
    pub nu_kind: NuKind,
}

impl DriftSpec {
    pub fn new(
        kind: DriftKind,
        coeff: f64,
        clip_epsilon: Option<f64>,
        nu_kind: NuKind,
    ) -> Result<Self> {
        let spec = Self {
            kind,
            coeff,
            clip_epsilon,
            nu_kind,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Unit coefficient, default clip range and default weighting.
    pub fn of(kind: DriftKind) -> Self {
        Self {
            kind,
            coeff: 1.0,
            clip_epsilon: (kind == DriftKind::PpoClip).then_some(DEFAULT_CLIP_EPSILON),
            nu_kind: kind.default_nu(),
        }
    }

    pub fn trivial() -> Self {
        Self::of(DriftKind::Trivial)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.coeff >= 0.0 && self.coeff.is_finite()) {
            return bad(format!("drift coefficient {} must be finite and >= 0", self.coeff));
        }
        match (self.kind, self.clip_epsilon) {
            (DriftKind::PpoClip, Some(eps)) if eps > 0.0 && eps < 1.0 => {}
            (DriftKind::PpoClip, Some(eps)) => return bad(format!("clip epsilon {eps} outside (0, 1)")),
            (DriftKind::PpoClip, None) => return bad("ppo_clip needs a clip epsilon".into()),
            (_, Some(_)) => return bad(format!("{} takes no clip epsilon", self.kind)),
            (_, None) => {}
        }
        if (self.nu_kind == NuKind::DiracMax) != (self.kind == DriftKind::TrlMaxKl) {
            return bad("dirac_max weighting is used exactly by trl_max_kl".into());
        }
        Ok(())
    }

    /// Kinds whose drift vanishes only at `pibar = pi`.
    pub fn is_positive(&self) -> bool {
        self.coeff > 0.0 && self.kind != DriftKind::Trivial && self.kind != DriftKind::PpoClip
    }
}

/// Per-state drift evaluator with the old-policy constants folded in.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RowDrift {
    kind: DriftKind,
    /// `coeff`, times `(1 - gamma) C_pi` for `TrlMaxKl`.
    scale: f64,
    clip_epsilon: f64,
}

impl RowDrift {
    pub(crate) fn new(spec: &DriftSpec, gamma: f64, adv: &[f64]) -> Self {
        let scale = match spec.kind {
            DriftKind::TrlMaxKl => spec.coeff * (1.0 - gamma) * trl_constant(gamma, adv),
            _ => spec.coeff,
        };
        Self {
            kind: spec.kind,
            scale,
            clip_epsilon: spec.clip_epsilon.unwrap_or(DEFAULT_CLIP_EPSILON),
        }
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.kind == DriftKind::Trivial || self.scale == 0.0
    }

    pub(crate) fn value(&self, pi: &[f64], pibar: &[f64], adv: &[f64]) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let raw = match self.kind {
            DriftKind::Trivial => 0.0,
            DriftKind::PpoClip => ppo_clip(pi, pibar, adv, self.clip_epsilon),
            kind => divergence_unchecked(kind.divergence().unwrap(), pi, pibar),
        };
        self.scale * raw
    }

    /// Derivative of the drift along `e_a - pibar` for every action `a`.
    ///
    /// Smooth kinds are differentiated analytically; the others use central
    /// differences of width `h` (forward differences where `pibar[a] < h`).
    pub(crate) fn centered_grad(
        &self,
        pi: &[f64],
        pibar: &[f64],
        adv: &[f64],
        h: f64,
        out: &mut [f64],
        scratch: &mut [f64],
    ) {
        if self.is_zero() {
            out.fill(0.0);
            return;
        }
        match self.kind {
            DriftKind::Kl | DriftKind::ReverseKl | DriftKind::SqL2 | DriftKind::TrlMaxKl => {
                divergence_grad_q(self.kind.divergence().unwrap(), pi, pibar, out);
                let mean = dot(pibar, out);
                for o in out.iter_mut() {
                    *o = self.scale * (*o - mean);
                }
            }
            _ => {
                for a in 0..pibar.len() {
                    let along = |t: f64, buf: &mut [f64]| {
                        for (b, (x, &p)) in buf.iter_mut().zip(pibar).enumerate() {
                            *x = (1.0 - t) * p + if b == a { t } else { 0.0 };
                        }
                    };
                    along(h, scratch);
                    let plus = self.value(pi, scratch, adv);
                    out[a] = if pibar[a] * (1.0 + h) >= h {
                        along(-h, scratch);
                        (plus - self.value(pi, scratch, adv)) / (2.0 * h)
                    } else {
                        (plus - self.value(pi, pibar, adv)) / h
                    };
                }
            }
        }
    }
}

/// `C_pi = 4 gamma max|A_pi| / (1 - gamma)^2`.
pub fn trl_constant(gamma: f64, adv: &[f64]) -> f64 {
    let max_adv = adv.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    4.0 * gamma * max_adv / ((1.0 - gamma) * (1.0 - gamma))
}

/// `sum_a pi(a) ReLU((r - clip(r, 1 - eps, 1 + eps)) A(a))` with `r = pibar / pi`.
fn ppo_clip(pi: &[f64], pibar: &[f64], adv: &[f64], eps: f64) -> f64 {
    pi.iter()
        .zip(pibar)
        .zip(adv)
        .map(|((&p, &q), &a)| {
            let r = q / p.max(PROB_FLOOR);
            let clipped = r.clamp(1.0 - eps, 1.0 + eps);
            p * ((r - clipped) * a).max(0.0)
        })
        .sum()
}

/// `D_pi(pibar | s)` given the old policy's advantage table.
pub fn drift_at_state(
    spec: &DriftSpec,
    mdp: &TabularMdp,
    adv: &[f64],
    pi: &TabularPolicy,
    pibar: &TabularPolicy,
    s: usize,
) -> Result<f64> {
    spec.validate()?;
    check_pair(mdp, pi, pibar)?;
    let na = mdp.num_actions();
    if adv.len() != mdp.num_states() * na {
        return Err(Error::DimensionMismatch {
            what: "advantage table",
            expected: mdp.num_states() * na,
            got: adv.len(),
        });
    }
    if s >= mdp.num_states() {
        return Err(Error::DimensionMismatch {
            what: "state index",
            expected: mdp.num_states(),
            got: s,
        });
    }
    let row = RowDrift::new(spec, mdp.gamma(), adv);
    Ok(row.value(pi.row(s), pibar.row(s), &adv[s * na..(s + 1) * na]))
}

/// Per-state drifts, the weighting actually used, and their inner product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub per_state: Vec<f64>,
    pub expected: f64,
    pub nu_weights: Vec<f64>,
}

/// `D^nu_pi(pibar) = E_{s ~ nu}[D_pi(pibar | s)]`.
pub fn expected_drift(
    spec: &DriftSpec,
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pibar: &TabularPolicy,
    beta: &[f64],
) -> Result<DriftReport> {
    spec.validate()?;
    check_pair(mdp, pi, pibar)?;
    check_sampling(mdp, beta)?;
    let adv = evaluate_policy(mdp, pi)?.adv;
    let row = RowDrift::new(spec, mdp.gamma(), &adv);
    let na = mdp.num_actions();
    let per_state: Vec<f64> = (0..mdp.num_states())
        .map(|s| row.value(pi.row(s), pibar.row(s), &adv[s * na..(s + 1) * na]))
        .collect();
    let nu_weights = nu_weights(spec.nu_kind, mdp, pi, beta, &per_state)?;
    let expected = dot(&nu_weights, &per_state);
    Ok(DriftReport {
        per_state,
        expected,
        nu_weights,
    })
}

/// Resolves `nu`. `per_state` is only consulted by `DiracMax`.
pub(crate) fn nu_weights(
    kind: NuKind,
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    beta: &[f64],
    per_state: &[f64],
) -> Result<Vec<f64>> {
    Ok(match kind {
        NuKind::MatchBeta => beta.to_vec(),
        NuKind::RhoBar => discounted_visitation(mdp, pi, true)?,
        NuKind::DiracMax => dirac_at(beta.len(), dirac_state(beta, per_state)),
    })
}

/// Decision state (positive `beta`) with the largest drift; ties go low.
pub(crate) fn dirac_state(beta: &[f64], per_state: &[f64]) -> usize {
    let mut best: Option<usize> = None;
    for s in 0..beta.len() {
        if beta[s] > 0.0 && best.is_none_or(|b| per_state[s] > per_state[b]) {
            best = Some(s);
        }
    }
    best.unwrap_or_else(|| argmax_lowest(per_state))
}

pub(crate) fn dirac_at(n: usize, s: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    w[s] = 1.0;
    w
}

/// `nu(s) / beta(s)`, defined as 0 where `beta(s) = 0`.
pub(crate) fn nu_over_beta(nu: &[f64], beta: &[f64]) -> Vec<f64> {
    nu.iter()
        .zip(beta)
        .map(|(&n, &b)| if b > 0.0 { n / b } else { 0.0 })
        .collect()
}

fn check_pair(mdp: &TabularMdp, pi: &TabularPolicy, pibar: &TabularPolicy) -> Result<()> {
    pi.check_shape(mdp.num_states(), mdp.num_actions())?;
    pibar.check_shape(mdp.num_states(), mdp.num_actions())
}

/// A sampling distribution must be a distribution that is positive on every
/// decision state. Terminal states may carry zero weight.
pub fn check_sampling(mdp: &TabularMdp, beta: &[f64]) -> Result<()> {
    if beta.len() != mdp.num_states() {
        return Err(Error::DimensionMismatch {
            what: "sampling distribution",
            expected: mdp.num_states(),
            got: beta.len(),
        });
    }
    check_distribution(beta, 1e-10)
        .map_err(|e| Error::InvalidDistribution(format!("sampling distribution {e}")))?;
    if let Some(state) = mdp.decision_states().into_iter().find(|&s| beta[s] <= 0.0) {
        return Err(Error::ZeroSamplingWeight { state });
    }
    Ok(())
}

/// Outcome of [`validate_drift`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftValidation {
    /// Smallest per-state drift seen over random `pibar`.
    pub min_drift: f64,
    /// Step sizes `h` and `h / 10`.
    pub steps: [f64; 2],
    /// Largest `|D(pi + t v | s) - D(pi | s)| / t` for each step `t`.
    pub max_quotient: [f64; 2],
}

impl DriftValidation {
    pub const NONNEG_TOL: f64 = -1e-10;

    pub fn nonnegative(&self) -> bool {
        self.min_drift >= Self::NONNEG_TOL
    }

    /// Difference quotients shrink like the step: `<= 10 t` at both steps.
    pub fn zero_gradient(&self) -> bool {
        self.steps
            .iter()
            .zip(&self.max_quotient)
            .all(|(&t, &q)| q <= 10.0 * t)
    }

    pub fn passed(&self) -> bool {
        self.nonnegative() && self.zero_gradient()
    }
}

/// Numerical check of the two drift axioms around an interior policy `pi`.
///
/// Nonnegativity is probed with `trials` random `pibar`, each a random
/// blend of `pi` and a uniform simplex sample. The zero-gradient axiom is
/// probed with `directions` random tangent vectors `v = p - pi(.|s)`,
/// `p` uniform on the simplex, at steps `h` and `h / 10`.
pub fn validate_drift(
    spec: &DriftSpec,
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    trials: usize,
    directions: usize,
    h: f64,
    seed: u64,
) -> Result<DriftValidation> {
    spec.validate()?;
    pi.check_shape(mdp.num_states(), mdp.num_actions())?;
    if pi.probs().iter().any(|&p| p <= 0.0) {
        return Err(Error::InvalidDistribution("validation needs an interior policy".into()));
    }
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let adv = evaluate_policy(mdp, pi)?.adv;
    let row = RowDrift::new(spec, mdp.gamma(), &adv);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut min_drift = f64::INFINITY;
    let mut pibar = vec![0.0; na];
    for _ in 0..trials {
        for s in 0..ns {
            let lambda: f64 = rng.random();
            let p = flat_dirichlet(&mut rng, na);
            for (q, (&x, &y)) in pibar.iter_mut().zip(p.iter().zip(pi.row(s))) {
                *q = lambda * x + (1.0 - lambda) * y;
            }
            let d = row.value(pi.row(s), &pibar, &adv[s * na..(s + 1) * na]);
            min_drift = min_drift.min(d);
        }
    }

    let steps = [h, h / 10.0];
    let mut max_quotient = [0.0_f64; 2];
    for _ in 0..directions {
        for s in 0..ns {
            let base = pi.row(s);
            let adv_s = &adv[s * na..(s + 1) * na];
            let p = flat_dirichlet(&mut rng, na);
            let at_pi = row.value(base, base, adv_s);
            for (k, &t) in steps.iter().enumerate() {
                for ((q, &x), &y) in pibar.iter_mut().zip(&p).zip(base) {
                    *q = y + t * (x - y);
                }
                let quotient = ((row.value(base, &pibar, adv_s) - at_pi) / t).abs();
                max_quotient[k] = max_quotient[k].max(quotient);
            }
        }
    }
    Ok(DriftValidation {
        min_drift,
        steps,
        max_quotient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_random_mdp, build_single_step};

    fn two_action_mdp() -> TabularMdp {
        TabularMdp::new(1, 2, vec![1.0, 0.0], vec![1.0, 1.0], 0.5, vec![1.0], &[]).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(DriftSpec::new(DriftKind::PpoClip, 1.0, None, NuKind::MatchBeta).is_err());
        assert!(DriftSpec::new(DriftKind::PpoClip, 1.0, Some(1.5), NuKind::MatchBeta).is_err());
        assert!(DriftSpec::new(DriftKind::Kl, 1.0, Some(0.2), NuKind::MatchBeta).is_err());
        assert!(DriftSpec::new(DriftKind::Kl, -1.0, None, NuKind::MatchBeta).is_err());
        assert!(DriftSpec::new(DriftKind::Kl, 1.0, None, NuKind::DiracMax).is_err());
        assert!(DriftSpec::new(DriftKind::TrlMaxKl, 1.0, None, NuKind::MatchBeta).is_err());
        for kind in DriftKind::ALL {
            DriftSpec::of(kind).validate().unwrap();
            assert_eq!(kind.name().parse::<DriftKind>().unwrap(), kind);
        }
        assert_eq!("ppo-clip".parse::<DriftKind>().unwrap(), DriftKind::PpoClip);
    }

    #[test]
    fn ppo_clip_hand_example() {
        let pi = [0.5, 0.5];
        let pibar = [0.9, 0.1];
        let adv = [1.0, -1.0];
        assert!((ppo_clip(&pi, &pibar, &adv, 0.2) - 0.6).abs() < 1e-12);
        // All ratios inside the band.
        assert_eq!(ppo_clip(&pi, &[0.55, 0.45], &adv, 0.2), 0.0);
    }

    #[test]
    fn ppo_clip_through_public_entry() {
        let mdp = two_action_mdp();
        let pi = TabularPolicy::uniform(1, 2);
        let pibar = TabularPolicy::new(1, 2, vec![0.9, 0.1]).unwrap();
        let spec = DriftSpec::of(DriftKind::PpoClip);
        let d = drift_at_state(&spec, &mdp, &[1.0, -1.0], &pi, &pibar, 0).unwrap();
        assert!((d - 0.6).abs() < 1e-12);
    }

    #[test]
    fn zero_at_identity_for_every_kind() {
        let mdp = build_random_mdp(3, 3, 0.9, 1).unwrap();
        let pi = TabularPolicy::new(
            3,
            3,
            vec![0.2, 0.3, 0.5, 0.6, 0.3, 0.1, 0.1, 0.1, 0.8],
        )
        .unwrap();
        let beta = vec![1.0 / 3.0; 3];
        for kind in DriftKind::ALL {
            let report = expected_drift(&DriftSpec::of(kind), &mdp, &pi, &pi, &beta).unwrap();
            assert!(report.per_state.iter().all(|&d| d == 0.0), "{kind}");
            assert_eq!(report.expected, 0.0);
        }
    }

    #[test]
    fn match_beta_weighting_by_hand() {
        let mdp = TabularMdp::new(
            2,
            2,
            vec![0.0; 4],
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            0.9,
            vec![0.5, 0.5],
            &[],
        )
        .unwrap();
        let pi = TabularPolicy::uniform(2, 2);
        // sq_l2 per state: 2 x^2 with x the shift of the first action.
        let x0 = (0.1_f64).sqrt();
        let x1 = (0.2_f64).sqrt();
        let pibar =
            TabularPolicy::new(2, 2, vec![0.5 + x0, 0.5 - x0, 0.5 + x1, 0.5 - x1]).unwrap();
        let report =
            expected_drift(&DriftSpec::of(DriftKind::SqL2), &mdp, &pi, &pibar, &[0.5, 0.5])
                .unwrap();
        assert!((report.per_state[0] - 0.2).abs() < 1e-12);
        assert!((report.per_state[1] - 0.4).abs() < 1e-12);
        assert!((report.expected - 0.3).abs() < 1e-12);
    }

    #[test]
    fn dirac_max_on_single_changed_state() {
        let mdp = build_random_mdp(3, 2, 0.9, 4).unwrap();
        let pi = TabularPolicy::uniform(3, 2);
        let pibar = TabularPolicy::new(3, 2, vec![0.5, 0.5, 0.8, 0.2, 0.5, 0.5]).unwrap();
        let spec = DriftSpec::of(DriftKind::TrlMaxKl);
        let beta = vec![1.0 / 3.0; 3];
        let report = expected_drift(&spec, &mdp, &pi, &pibar, &beta).unwrap();
        assert_eq!(report.nu_weights, vec![0.0, 1.0, 0.0]);
        let adv = evaluate_policy(&mdp, &pi).unwrap().adv;
        let g = mdp.gamma();
        let scaled = (1.0 - g) * trl_constant(g, &adv) * crate::policy::divergence(
            DivergenceKind::Kl,
            pi.row(1),
            pibar.row(1),
        )
        .unwrap();
        assert!((report.expected - scaled).abs() < 1e-12);
    }

    #[test]
    fn dirac_ignores_terminal_states() {
        assert_eq!(dirac_state(&[0.0, 1.0], &[0.0, 0.0]), 1);
        assert_eq!(dirac_state(&[0.5, 0.5], &[0.0, 0.0]), 0);
        assert_eq!(dirac_state(&[0.5, 0.5], &[0.1, 0.3]), 1);
    }

    #[test]
    fn zero_sampling_weight_is_rejected() {
        let mdp = build_single_step();
        let pi = TabularPolicy::uniform(2, 5);
        let err = expected_drift(&DriftSpec::of(DriftKind::Kl), &mdp, &pi, &pi, &[0.0, 1.0]);
        assert!(matches!(err, Err(Error::ZeroSamplingWeight { state: 0 })));
        // Terminal state 1 may have zero weight.
        expected_drift(&DriftSpec::of(DriftKind::Kl), &mdp, &pi, &pi, &[1.0, 0.0]).unwrap();
    }

    #[test]
    fn centered_gradients_match_finite_differences() {
        let pi = [0.2, 0.5, 0.3];
        let pibar = [0.3, 0.3, 0.4];
        let adv = [0.4, -0.1, -0.2];
        let mut out = [0.0; 3];
        let mut scratch = [0.0; 3];
        for kind in [DriftKind::Kl, DriftKind::ReverseKl, DriftKind::SqL2, DriftKind::TrlMaxKl] {
            let row = RowDrift {
                kind,
                scale: 1.3,
                clip_epsilon: 0.2,
            };
            row.centered_grad(&pi, &pibar, &adv, 1e-6, &mut out, &mut scratch);
            for a in 0..3 {
                let t = 1e-6;
                let shift = |t: f64| -> Vec<f64> {
                    (0..3)
                        .map(|b| (1.0 - t) * pibar[b] + if b == a { t } else { 0.0 })
                        .collect()
                };
                let fd = (row.value(&pi, &shift(t), &adv) - row.value(&pi, &shift(-t), &adv))
                    / (2.0 * t);
                assert!((fd - out[a]).abs() <= 1e-4 * fd.abs().max(1.0), "{kind} {a}");
            }
        }
    }

    #[test]
    fn kl_drift_passes_validation() {
        let mdp = build_random_mdp(3, 3, 0.5, 2).unwrap();
        let pi = TabularPolicy::uniform(3, 3);
        let report = validate_drift(&DriftSpec::of(DriftKind::Kl), &mdp, &pi, 50, 20, 1e-4, 0)
            .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn quotient_shrinks_with_the_step() {
        let mdp = build_random_mdp(2, 3, 0.5, 3).unwrap();
        let pi = TabularPolicy::uniform(2, 3);
        let report = validate_drift(&DriftSpec::of(DriftKind::SqTv), &mdp, &pi, 10, 20, 1e-2, 1)
            .unwrap();
        let ratio = report.max_quotient[0] / report.max_quotient[1];
        assert!(ratio > 5.0, "{report:?}");
    }

    #[test]
    fn numerical_gradients_at_smooth_points() {
        // Away from kinks, sq_tv is (0.5 sum |p - q|)^2 with fixed signs and
        // ppo_clip is linear in pibar on each side of the band.
        let pi = [0.2, 0.5, 0.3];
        let adv = [0.4, -0.1, -0.2];
        let mut out = [0.0; 3];
        let mut scratch = [0.0; 3];
        let tv = RowDrift {
            kind: DriftKind::SqTv,
            scale: 1.0,
            clip_epsilon: 0.2,
        };
        let pibar = [0.35, 0.3, 0.35];
        tv.centered_grad(&pi, &pibar, &adv, 1e-6, &mut out, &mut scratch);
        let mut exact = [0.0; 3];
        divergence_grad_q(DivergenceKind::SqTv, &pi, &pibar, &mut exact);
        let mean = dot(&pibar, &exact);
        for a in 0..3 {
            assert!((out[a] - (exact[a] - mean)).abs() < 1e-6, "{a}");
        }
        let ppo = RowDrift {
            kind: DriftKind::PpoClip,
            ..tv
        };
        // Ratios (1.5, 0.9, 0.83): only action 0 leaves the band.
        let pibar = [0.3, 0.45, 0.25];
        ppo.centered_grad(&pi, &pibar, &adv, 1e-6, &mut out, &mut scratch);
        // Only action 0 contributes: pi0 * (q0/pi0 - 1.2) * A0 = (q0 - 0.24) * A0.
        let g = [adv[0], 0.0, 0.0];
        let mean = dot(&pibar, &g);
        for a in 0..3 {
            assert!((out[a] - (g[a] - mean)).abs() < 1e-6, "{a}");
        }
    }
}
