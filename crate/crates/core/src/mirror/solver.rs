//! Constrained maximisation of the mirror objective over softmax logits.
//!
//! Iterates stay feasible: every accepted step keeps a non-negative
//! neighbourhood margin and strictly raises the objective. Search
//! directions are natural-gradient directions of the per-state mirror
//! values, so the step is invariant to how peaked a row already is. After
//! the ascent, every state whose mirror value fell is pulled back toward
//! its old row, and reset to it if needed. A reset never moves the policy
//! away from the old one, so membership survives and every per-state
//! mirror gain ends non-negative.

use serde::{Deserialize, Serialize};

use crate::drift::{check_sampling, dirac_at, DriftReport, DriftSpec, NuKind, RowDrift};
use crate::error::{Error, Result};
use crate::mdp::{discounted_visitation, dot, evaluate_policy, TabularMdp};
use crate::neighbourhood::{Ball, NeighbourhoodSpec};
use crate::policy::{softmax_row, SoftmaxPolicy, TabularPolicy};

/// Logits are kept in `[-LOGIT_BOUND, LOGIT_BOUND]`, so rows stay strictly
/// positive.
pub const LOGIT_BOUND: f64 = 40.0;

/// Mirror gains below `-SAFEGUARD_TOL` trigger a pull-back of the state.
const SAFEGUARD_TOL: f64 = 1e-12;

const MAX_RETREATS: usize = 40;
const MAX_EXPANSIONS: usize = 60;
const MAX_SHRINKS: usize = 60;
const BISECTIONS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_outer_iters: usize,
    /// Stop once every `u(a|s)` is below this, where `u` is the centred
    /// derivative of the mirror value along `e_a - pibar(.|s)`. Unlike the
    /// logit gradient, `u` does not vanish on saturated rows.
    pub grad_tol: f64,
    pub step_init: f64,
    pub backtrack_factor: f64,
    /// Central-difference width for drifts without analytic gradients.
    pub finite_diff_h: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 100,
            grad_tol: 1e-10,
            step_init: 1.0,
            backtrack_factor: 0.5,
            finite_diff_h: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.grad_tol, self.step_init, self.finite_diff_h];
        if self.max_outer_iters == 0 || positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidConfig(
                "solver iterations, tolerances and steps must be positive".into(),
            ));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "backtrack factor {} outside (0, 1)",
                self.backtrack_factor
            )));
        }
        Ok(())
    }
}

/// Why the ascent stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Gradient tolerance met.
    Stationary,
    /// `max_outer_iters` reached.
    IterationLimit,
    /// No feasible step raised the objective. On the first iteration this
    /// returns the old policy with zero gain.
    NoImprovingStep,
}

#[derive(Debug, Clone)]
pub struct UpdateResult {
    pub new_logits: SoftmaxPolicy,
    pub new_policy: TabularPolicy,
    /// Mirror objective of the new policy minus that of the old one.
    pub objective_gain: f64,
    /// `[M V_old](s) - V_old(s)` per state under the new policy.
    pub per_state_mirror_gain: Vec<f64>,
    pub drift_report: DriftReport,
    /// States pulled back toward the old row by the safeguard, ascending.
    pub safeguarded_states: Vec<usize>,
    pub margin: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

struct Problem<'a> {
    na: usize,
    /// Decision states; all other rows are pinned to the old policy.
    active: Vec<usize>,
    beta: &'a [f64],
    adv: Vec<f64>,
    old_probs: Vec<f64>,
    old_logits: Vec<f64>,
    drift: RowDrift,
    dirac: bool,
    /// `nu / beta` and `nu` for weightings that do not depend on `pibar`.
    ratio: Vec<f64>,
    nu: Vec<f64>,
    ball: Ball,
    h: f64,
}

#[derive(Debug, Clone)]
struct Point {
    logits: Vec<f64>,
    probs: Vec<f64>,
    /// `sum_a (pibar - pi) A_pi(s, a)`.
    adv_gain: Vec<f64>,
    drift: Vec<f64>,
    objective: f64,
    margin: f64,
}

impl Problem<'_> {
    fn k(&self) -> usize {
        self.na - 1
    }

    fn point(&self, logits: Vec<f64>) -> Point {
        let (na, k) = (self.na, self.k());
        let ns = self.beta.len();
        let mut probs = self.old_probs.clone();
        let mut adv_gain = vec![0.0; ns];
        let mut drift = vec![0.0; ns];
        let mut ball_total = 0.0;
        for &s in &self.active {
            let theta = &logits[s * k..(s + 1) * k];
            let old_theta = &self.old_logits[s * k..(s + 1) * k];
            if theta == old_theta {
                continue;
            }
            let row = &mut probs[s * na..(s + 1) * na];
            softmax_row(theta, row);
            let old = &self.old_probs[s * na..(s + 1) * na];
            let adv = &self.adv[s * na..(s + 1) * na];
            adv_gain[s] = row.iter().zip(old).zip(adv).map(|((q, p), a)| (q - p) * a).sum();
            drift[s] = self.drift.value(old, row, adv);
            ball_total += self.ball.state_term(s, old, row, old_theta, theta, adv);
        }
        let linear: f64 = self.active.iter().map(|&s| self.beta[s] * adv_gain[s]).sum();
        let penalty = if self.dirac {
            drift[self.dirac_state(&drift)]
        } else {
            self.active
                .iter()
                .map(|&s| self.beta[s] * self.ratio[s] * drift[s])
                .sum()
        };
        let margin = self.ball.margin(ball_total);
        Point {
            logits,
            probs,
            adv_gain,
            drift,
            objective: linear - penalty,
            margin,
        }
    }

    fn dirac_state(&self, drift: &[f64]) -> usize {
        let mut best = self.active[0];
        for &s in &self.active[1..] {
            if drift[s] > drift[best] {
                best = s;
            }
        }
        best
    }

    /// `nu(s) / beta(s)` at `p`.
    fn weight(&self, p: &Point, s: usize) -> f64 {
        if self.dirac {
            if s == self.dirac_state(&p.drift) {
                1.0 / self.beta[s]
            } else {
                0.0
            }
        } else {
            self.ratio[s]
        }
    }

    fn mirror_gains(&self, p: &Point) -> Vec<f64> {
        let mut gains = vec![0.0; self.beta.len()];
        for &s in &self.active {
            gains[s] = p.adv_gain[s] - self.weight(p, s) * p.drift[s];
        }
        gains
    }

    /// Writes the natural-gradient direction in reduced logits and returns
    /// `max_{s, a} u(a|s)`, which is zero exactly at stationary points.
    fn direction(&self, p: &Point, dir: &mut [f64]) -> f64 {
        let (na, k) = (self.na, self.k());
        let mut u = vec![0.0; na];
        let mut grad = vec![0.0; na];
        let mut scratch = vec![0.0; na];
        let mut stat = 0.0_f64;
        dir.fill(0.0);
        for &s in &self.active {
            let row = &p.probs[s * na..(s + 1) * na];
            let old = &self.old_probs[s * na..(s + 1) * na];
            let adv = &self.adv[s * na..(s + 1) * na];
            let mean = dot(row, adv);
            let w = self.weight(p, s);
            if w > 0.0 {
                self.drift.centered_grad(old, row, adv, self.h, &mut grad, &mut scratch);
            } else {
                grad.fill(0.0);
            }
            for a in 0..na {
                u[a] = adv[a] - mean - w * grad[a];
                stat = stat.max(u[a]);
            }
            for a in 0..k {
                dir[s * k + a] = u[a] - u[k];
            }
        }
        stat
    }

    fn step(&self, from: &Point, dir: &[f64], t: f64) -> Point {
        let logits = from
            .logits
            .iter()
            .zip(dir)
            .map(|(x, d)| (x + t * d).clamp(-LOGIT_BOUND, LOGIT_BOUND))
            .collect();
        self.point(logits)
    }

    fn accepts(&self, from: &Point, to: &Point) -> bool {
        to.margin >= 0.0 && to.objective > from.objective
    }
}

/// One mirror-learning update from `pi`:
/// `argmax_{pibar in N(pi)} E_{s ~ beta}[[M V_pi](s)]`, solved approximately
/// by feasible natural-gradient ascent and made safe by the per-state reset.
pub fn solve_update(
    mdp: &TabularMdp,
    pi: &SoftmaxPolicy,
    drift: &DriftSpec,
    neigh: &NeighbourhoodSpec,
    beta: &[f64],
    cfg: &SolverConfig,
) -> Result<UpdateResult> {
    drift.validate()?;
    neigh.validate()?;
    cfg.validate()?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if pi.num_states() != ns || pi.num_actions() != na {
        return Err(Error::DimensionMismatch {
            what: "softmax policy",
            expected: ns * na,
            got: pi.num_states() * pi.num_actions(),
        });
    }
    check_sampling(mdp, beta)?;
    let old = pi.to_simplex()?;
    let values = evaluate_policy(mdp, &old)?;
    let active: Vec<usize> = mdp.decision_states();
    let nu = match drift.nu_kind {
        NuKind::MatchBeta => beta.to_vec(),
        NuKind::RhoBar => discounted_visitation(mdp, &old, true)?,
        NuKind::DiracMax => Vec::new(),
    };
    let ratio = match drift.nu_kind {
        NuKind::MatchBeta => active.iter().fold(vec![0.0; ns], |mut r, &s| {
            r[s] = 1.0;
            r
        }),
        NuKind::RhoBar => crate::drift::nu_over_beta(&nu, beta),
        NuKind::DiracMax => Vec::new(),
    };
    let problem = Problem {
        na,
        ball: Ball::new(neigh, mdp, &old, beta, &values.adv)?,
        drift: RowDrift::new(drift, mdp.gamma(), &values.adv),
        dirac: drift.nu_kind == NuKind::DiracMax,
        active,
        beta,
        adv: values.adv,
        old_probs: old.probs().to_vec(),
        old_logits: pi.logits().to_vec(),
        ratio,
        nu,
        h: cfg.finite_diff_h,
    };

    let mut current = problem.point(pi.logits().to_vec());
    let mut dir = vec![0.0; current.logits.len()];
    let mut t = cfg.step_init;
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0;
    if problem.active.is_empty() || na == 1 {
        status = SolveStatus::Stationary;
    } else {
        for _ in 0..cfg.max_outer_iters {
            if problem.direction(&current, &mut dir) <= cfg.grad_tol {
                status = SolveStatus::Stationary;
                break;
            }
            match line_search(&problem, &current, &dir, &mut t, cfg.backtrack_factor) {
                Some(next) => {
                    let progress = next.objective - current.objective;
                    current = next;
                    iterations += 1;
                    if progress <= f64::EPSILON * current.objective.abs().max(1e-300) {
                        status = SolveStatus::Stationary;
                        break;
                    }
                }
                None => {
                    status = SolveStatus::NoImprovingStep;
                    break;
                }
            }
        }
    }

    // Pull back every state whose mirror value fell: halve its logit
    // displacement from the old row, and reset it outright after
    // MAX_RETREATS halvings or if halving ever costs membership. With a
    // Dirac weighting a retreat can move the weight to another state,
    // hence the loop.
    let k = na - 1;
    let mut safeguarded = Vec::new();
    let mut retreats = vec![0usize; ns];
    loop {
        let gains = problem.mirror_gains(&current);
        let worse: Vec<usize> = problem
            .active
            .iter()
            .copied()
            .filter(|&s| gains[s] < -SAFEGUARD_TOL)
            .collect();
        if worse.is_empty() {
            break;
        }
        let mut halved = current.logits.clone();
        let mut reset = current.logits.clone();
        for &s in &worse {
            let old_row = &problem.old_logits[s * k..(s + 1) * k];
            reset[s * k..(s + 1) * k].copy_from_slice(old_row);
            retreats[s] += 1;
            if retreats[s] >= MAX_RETREATS {
                halved[s * k..(s + 1) * k].copy_from_slice(old_row);
            } else {
                for (x, o) in halved[s * k..(s + 1) * k].iter_mut().zip(old_row) {
                    *x = o + 0.5 * (*x - o);
                }
            }
        }
        safeguarded.extend(worse);
        let candidate = problem.point(halved);
        current = if candidate.margin >= 0.0 {
            candidate
        } else {
            problem.point(reset)
        };
    }
    safeguarded.sort_unstable();
    safeguarded.dedup();

    if current.margin < -1e-10 {
        return Err(Error::InvariantViolation {
            iter: iterations,
            message: format!("update left the neighbourhood (margin {})", current.margin),
            dump: format!("logits: {:?}", current.logits),
        });
    }

    let per_state_mirror_gain = problem.mirror_gains(&current);
    let nu_weights = if problem.dirac {
        dirac_at(ns, problem.dirac_state(&current.drift))
    } else {
        problem.nu.clone()
    };
    let drift_report = DriftReport {
        expected: dot(&nu_weights, &current.drift),
        per_state: current.drift.clone(),
        nu_weights,
    };
    let new_policy = TabularPolicy::new(ns, na, current.probs.clone())?;
    let new_logits = SoftmaxPolicy::new(ns, na, current.logits.clone())?;
    Ok(UpdateResult {
        new_logits,
        new_policy,
        objective_gain: current.objective,
        per_state_mirror_gain,
        drift_report,
        safeguarded_states: safeguarded,
        margin: current.margin,
        iterations,
        status,
    })
}

/// Finds a feasible, strictly improving point along `dir`. Accepted steps
/// are expanded by doubling while they keep improving, and refined by
/// bisection when the doubled step fails. `t` carries over between calls.
fn line_search(
    problem: &Problem<'_>,
    from: &Point,
    dir: &[f64],
    t: &mut f64,
    shrink: f64,
) -> Option<Point> {
    let mut best = problem.step(from, dir, *t);
    if !problem.accepts(from, &best) {
        let mut found = false;
        for _ in 0..MAX_SHRINKS {
            *t *= shrink;
            best = problem.step(from, dir, *t);
            if problem.accepts(from, &best) {
                found = true;
                break;
            }
        }
        if !found {
            *t = 1.0;
            return None;
        }
        return Some(best);
    }
    for _ in 0..MAX_EXPANSIONS {
        let trial = problem.step(from, dir, 2.0 * *t);
        if problem.accepts(from, &trial) && trial.objective > best.objective {
            best = trial;
            *t *= 2.0;
            continue;
        }
        let (mut lo, mut hi) = (*t, 2.0 * *t);
        for _ in 0..BISECTIONS {
            let mid = 0.5 * (lo + hi);
            let trial = problem.step(from, dir, mid);
            if problem.accepts(from, &trial) && trial.objective > best.objective {
                best = trial;
                lo = mid;
            } else {
                hi = mid;
            }
        }
        *t = lo;
        break;
    }
    Some(best)
}
