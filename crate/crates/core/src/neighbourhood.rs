//! Neighbourhood operators `N(pi)` as membership tests with a signed
//! margin: `radius - distance(pi, pibar)`, member iff the margin is `>= 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::drift::{check_sampling, DriftKind, DriftSpec, RowDrift};
use crate::error::{Error, Result};
use crate::mdp::{discounted_visitation, evaluate_policy, TabularMdp};
use crate::policy::{divergence_unchecked, DivergenceKind, TabularPolicy};

pub const DEFAULT_DRIFT_BALL_RADIUS: f64 = 0.05;
pub const DEFAULT_AVG_KL_RADIUS: f64 = 0.01;
pub const DEFAULT_PARAM_L2_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighbourhoodKind {
    /// The whole policy space.
    Trivial,
    /// `E_{s ~ rho_bar_pi}[KL(pi || pibar)] <= radius`.
    AvgKlBall,
    /// Expected drift under `nu = beta` at most `radius`.
    DriftBall,
    /// Euclidean ball in softmax-logit space.
    ParamL2Ball,
}

impl NeighbourhoodKind {
    pub const ALL: [NeighbourhoodKind; 4] =
        [Self::Trivial, Self::AvgKlBall, Self::DriftBall, Self::ParamL2Ball];

    pub fn name(self) -> &'static str {
        match self {
            Self::Trivial => "trivial",
            Self::AvgKlBall => "avg_kl_ball",
            Self::DriftBall => "drift_ball",
            Self::ParamL2Ball => "param_l2_ball",
        }
    }

    pub fn default_radius(self) -> f64 {
        match self {
            Self::Trivial => 0.0,
            Self::AvgKlBall => DEFAULT_AVG_KL_RADIUS,
            Self::DriftBall => DEFAULT_DRIFT_BALL_RADIUS,
            Self::ParamL2Ball => DEFAULT_PARAM_L2_RADIUS,
        }
    }
}

impl fmt::Display for NeighbourhoodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NeighbourhoodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::UnknownName {
                vocabulary: "neighbourhood",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighbourhoodSpec {
    pub kind: NeighbourhoodKind,
    /// Ignored by the trivial kind.
    pub radius: f64,
    /// Drift measuring a `DriftBall`; absent otherwise.
    pub drift_ref: Option<DriftSpec>,
}

impl NeighbourhoodSpec {
    pub fn trivial() -> Self {
        Self {
            kind: NeighbourhoodKind::Trivial,
            radius: 0.0,
            drift_ref: None,
        }
    }

    pub fn avg_kl_ball(radius: f64) -> Result<Self> {
        Self::checked(NeighbourhoodKind::AvgKlBall, radius, None)
    }

    pub fn drift_ball(radius: f64, drift: DriftSpec) -> Result<Self> {
        Self::checked(NeighbourhoodKind::DriftBall, radius, Some(drift))
    }

    pub fn param_l2_ball(radius: f64) -> Result<Self> {
        Self::checked(NeighbourhoodKind::ParamL2Ball, radius, None)
    }

    /// Builds `kind` with `radius` (or its default); `drift` is kept only
    /// for drift balls.
    pub fn of(kind: NeighbourhoodKind, radius: Option<f64>, drift: DriftSpec) -> Result<Self> {
        if kind == NeighbourhoodKind::Trivial {
            return Ok(Self::trivial());
        }
        let drift_ref = (kind == NeighbourhoodKind::DriftBall).then_some(drift);
        Self::checked(kind, radius.unwrap_or(kind.default_radius()), drift_ref)
    }

    fn checked(kind: NeighbourhoodKind, radius: f64, drift_ref: Option<DriftSpec>) -> Result<Self> {
        let spec = Self {
            kind,
            radius,
            drift_ref,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// A drift ball over the trivial drift is the whole space; drift balls
    /// over `ppo_clip` are rejected since that drift vanishes on a band.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.kind == NeighbourhoodKind::Trivial {
            return Ok(());
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("{} radius {} must be positive", self.kind, self.radius));
        }
        match (self.kind, &self.drift_ref) {
            (NeighbourhoodKind::DriftBall, None) => bad("drift_ball needs a drift".into()),
            (NeighbourhoodKind::DriftBall, Some(d)) => {
                d.validate()?;
                if d.kind == DriftKind::PpoClip {
                    return bad("drift_ball cannot be measured by ppo_clip".into());
                }
                Ok(())
            }
            (_, Some(_)) => bad(format!("{} takes no drift", self.kind)),
            (_, None) => Ok(()),
        }
    }
}

/// Distance evaluator for one centre policy.
#[derive(Debug, Clone)]
pub(crate) struct Ball {
    kind: NeighbourhoodKind,
    radius: f64,
    /// Per-state weights: `rho_bar_pi` or `beta`.
    weights: Vec<f64>,
    drift: Option<RowDrift>,
}

impl Ball {
    pub(crate) fn new(
        spec: &NeighbourhoodSpec,
        mdp: &TabularMdp,
        pi: &TabularPolicy,
        beta: &[f64],
        adv: &[f64],
    ) -> Result<Self> {
        spec.validate()?;
        let weights = match spec.kind {
            NeighbourhoodKind::AvgKlBall => discounted_visitation(mdp, pi, true)?,
            NeighbourhoodKind::DriftBall => beta.to_vec(),
            _ => Vec::new(),
        };
        let drift = spec
            .drift_ref
            .as_ref()
            .map(|d| RowDrift::new(d, mdp.gamma(), adv));
        Ok(Self {
            kind: spec.kind,
            radius: spec.radius,
            weights,
            drift,
        })
    }

    pub(crate) fn is_unconstrained(&self) -> bool {
        match self.kind {
            NeighbourhoodKind::Trivial => true,
            NeighbourhoodKind::DriftBall => self.drift.is_none_or(|d| d.is_zero()),
            _ => false,
        }
    }

    /// Additive contribution of state `s` to the distance (squared logit
    /// distance for the parameter ball).
    pub(crate) fn state_term(
        &self,
        s: usize,
        pi: &[f64],
        pibar: &[f64],
        logits: &[f64],
        logits_bar: &[f64],
        adv: &[f64],
    ) -> f64 {
        match self.kind {
            NeighbourhoodKind::Trivial => 0.0,
            NeighbourhoodKind::AvgKlBall => {
                self.weights[s] * divergence_unchecked(DivergenceKind::Kl, pi, pibar)
            }
            NeighbourhoodKind::DriftBall => {
                self.weights[s] * self.drift.map_or(0.0, |d| d.value(pi, pibar, adv))
            }
            NeighbourhoodKind::ParamL2Ball => logits
                .iter()
                .zip(logits_bar)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        }
    }

    pub(crate) fn margin(&self, total: f64) -> f64 {
        match self.kind {
            NeighbourhoodKind::Trivial => f64::INFINITY,
            NeighbourhoodKind::ParamL2Ball => self.radius - total.sqrt(),
            _ if self.is_unconstrained() => f64::INFINITY,
            _ => self.radius - total,
        }
    }
}

/// `radius - distance(pi, pibar)`; `+inf` for the trivial kind.
///
/// The parameter ball compares softmax logits; a row of `pibar` on the
/// simplex boundary has no logits and lies outside every such ball unless
/// it equals the matching row of `pi`.
pub fn membership_margin(
    spec: &NeighbourhoodSpec,
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    pibar: &TabularPolicy,
    beta: &[f64],
) -> Result<f64> {
    spec.validate()?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    pi.check_shape(ns, na)?;
    pibar.check_shape(ns, na)?;
    check_sampling(mdp, beta)?;
    if spec.kind == NeighbourhoodKind::Trivial {
        return Ok(f64::INFINITY);
    }
    let adv = evaluate_policy(mdp, pi)?.adv;
    let ball = Ball::new(spec, mdp, pi, beta, &adv)?;
    Ok(ball.pair_margin(pi, pibar, &adv))
}

impl Ball {
    /// Margin of a whole policy pair, with `adv` the advantage table of `pi`.
    pub(crate) fn pair_margin(&self, pi: &TabularPolicy, pibar: &TabularPolicy, adv: &[f64]) -> f64 {
        if self.kind == NeighbourhoodKind::Trivial {
            return f64::INFINITY;
        }
        let na = pi.num_actions();
        let mut total = 0.0;
        let (mut la, mut lb) = (vec![0.0; na - 1], vec![0.0; na - 1]);
        for s in 0..pi.num_states() {
            let (p, q) = (pi.row(s), pibar.row(s));
            if self.kind == NeighbourhoodKind::ParamL2Ball {
                if p == q {
                    continue;
                }
                if !row_logits(p, &mut la) || !row_logits(q, &mut lb) {
                    return f64::NEG_INFINITY;
                }
            }
            total += self.state_term(s, p, q, &la, &lb, &adv[s * na..(s + 1) * na]);
        }
        self.margin(total)
    }
}

/// Logits relative to the last action; false on a boundary row.
fn row_logits(p: &[f64], out: &mut [f64]) -> bool {
    let last = *p.last().unwrap();
    if p.iter().any(|&x| x <= 0.0) {
        return false;
    }
    for (o, &x) in out.iter_mut().zip(p) {
        *o = (x / last).ln();
    }
    true
}
