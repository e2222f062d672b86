//! Finite MDPs and exact dynamic-programming primitives.
//!
//! Episode termination is modelled with absorbing terminal states that pay
//! zero reward under every action. Policy evaluation and visitation are
//! dense direct solves; state counts here are small.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::policy::{argmax_lowest, check_distribution, TabularPolicy};

const ROW_SUM_TOL: f64 = 1e-12;

/// Finite MDP `<S, A, r, P, gamma, d>` with absorbing terminal states.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    reward: Vec<f64>,
    transition: Vec<f64>,
    gamma: f64,
    initial_dist: Vec<f64>,
    terminal: Vec<bool>,
}

impl TabularMdp {
    /// `reward` is `[s * A + a]`, `transition` is `[(s * A + a) * S + s']`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        reward: Vec<f64>,
        transition: Vec<f64>,
        gamma: f64,
        initial_dist: Vec<f64>,
        terminal_states: &[usize],
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action space".into()));
        }
        let sa = num_states * num_actions;
        if reward.len() != sa {
            return Err(Error::DimensionMismatch {
                what: "reward table",
                expected: sa,
                got: reward.len(),
            });
        }
        if transition.len() != sa * num_states {
            return Err(Error::DimensionMismatch {
                what: "transition table",
                expected: sa * num_states,
                got: transition.len(),
            });
        }
        if initial_dist.len() != num_states {
            return Err(Error::DimensionMismatch {
                what: "initial distribution",
                expected: num_states,
                got: initial_dist.len(),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside [0, 1)")));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp(format!("non-finite reward {r}")));
        }
        for (i, row) in transition.chunks(num_states).enumerate() {
            check_distribution(row, ROW_SUM_TOL).map_err(|e| {
                Error::InvalidMdp(format!(
                    "transition row (s={}, a={}): {e}",
                    i / num_actions,
                    i % num_actions
                ))
            })?;
        }
        check_distribution(&initial_dist, ROW_SUM_TOL)
            .map_err(|e| Error::InvalidMdp(format!("initial distribution: {e}")))?;

        let mut terminal = vec![false; num_states];
        for &t in terminal_states {
            if t >= num_states {
                return Err(Error::InvalidMdp(format!("terminal state {t} out of range")));
            }
            terminal[t] = true;
            for a in 0..num_actions {
                let row = &transition[(t * num_actions + a) * num_states..][..num_states];
                if row[t] != 1.0 {
                    return Err(Error::InvalidMdp(format!(
                        "terminal state {t} does not self-loop under action {a}"
                    )));
                }
                if reward[t * num_actions + a] != 0.0 {
                    return Err(Error::InvalidMdp(format!(
                        "terminal state {t} pays non-zero reward under action {a}"
                    )));
                }
            }
        }

        Ok(Self {
            num_states,
            num_actions,
            reward,
            transition,
            gamma,
            initial_dist,
            terminal,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| self.terminal[s]).collect()
    }

    /// Non-terminal states, where the policy actually makes decisions.
    pub fn decision_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| !self.terminal[s]).collect()
    }

    /// `R_max = max |r(s, a)|`.
    pub fn r_max(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    /// `V_max = R_max / (1 - gamma)`.
    pub fn v_max(&self) -> f64 {
        self.r_max() / (1.0 - self.gamma)
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        pi.check_shape(self.num_states, self.num_actions)
    }

    /// `r_pi(s)` and `P_pi(s' | s)` as dense objects.
    fn policy_kernel(&self, pi: &TabularPolicy) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.num_states;
        let mut r_pi = DVector::zeros(n);
        let mut p_pi = DMatrix::zeros(n, n);
        for s in 0..n {
            for a in 0..self.num_actions {
                let w = pi.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                r_pi[s] += w * self.reward(s, a);
                for (s2, &p) in self.transition(s, a).iter().enumerate() {
                    p_pi[(s, s2)] += w * p;
                }
            }
        }
        (r_pi, p_pi)
    }

    fn q_from_v(&self, v: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.num_states * self.num_actions];
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let next: f64 = self.transition(s, a).iter().zip(v).map(|(p, x)| p * x).sum();
                q[s * self.num_actions + a] = self.reward(s, a) + self.gamma * next;
            }
        }
        q
    }
}

/// State values, action values and advantages of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub adv: Vec<f64>,
    num_actions: usize,
}

impl ValueTables {
    fn from_v(mdp: &TabularMdp, v: Vec<f64>) -> Self {
        let q = mdp.q_from_v(&v);
        let na = mdp.num_actions;
        let adv = q
            .iter()
            .enumerate()
            .map(|(i, qa)| qa - v[i / na])
            .collect();
        Self {
            v,
            q,
            adv,
            num_actions: na,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.num_actions + a]
    }

    pub fn adv(&self, s: usize, a: usize) -> f64 {
        self.adv[s * self.num_actions + a]
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn adv_row(&self, s: usize) -> &[f64] {
        &self.adv[s * self.num_actions..(s + 1) * self.num_actions]
    }
}

/// Exact evaluation: solves `v = r_pi + gamma P_pi v` directly.
pub fn evaluate_policy(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<ValueTables> {
    mdp.check_policy(pi)?;
    let (r_pi, p_pi) = mdp.policy_kernel(pi);
    let n = mdp.num_states;
    let system = DMatrix::identity(n, n) - p_pi * mdp.gamma;
    let v = system
        .lu()
        .solve(&r_pi)
        .ok_or_else(|| Error::InvalidMdp("singular Bellman system".into()))?;
    Ok(ValueTables::from_v(mdp, v.iter().copied().collect()))
}

/// `eta(pi) = E_{s ~ d}[V_pi(s)]`.
pub fn expected_return(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<f64> {
    let values = evaluate_policy(mdp, pi)?;
    Ok(dot(mdp.initial_dist(), &values.v))
}

/// Discounted state visitation `rho(s) = sum_t gamma^t Pr(s_t = s)`.
///
/// Visits end when the episode does: arriving in a terminal state is not
/// counted, so a one-step episode has `rho = d`. With `normalized` the
/// weights are rescaled to sum to one (for MDPs without terminal states
/// this is the usual `(1 - gamma) rho`).
pub fn discounted_visitation(
    mdp: &TabularMdp,
    pi: &TabularPolicy,
    normalized: bool,
) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    let n = mdp.num_states;
    let (_, mut p_pi) = mdp.policy_kernel(pi);
    for s in 0..n {
        for s2 in 0..n {
            if mdp.terminal[s] || mdp.terminal[s2] {
                p_pi[(s, s2)] = 0.0;
            }
        }
    }
    let system = DMatrix::identity(n, n) - p_pi.transpose() * mdp.gamma;
    let d = DVector::from_column_slice(mdp.initial_dist());
    let rho = system
        .lu()
        .solve(&d)
        .ok_or_else(|| Error::InvalidMdp("singular visitation system".into()))?;
    let mut rho: Vec<f64> = rho.iter().map(|x| x.max(0.0)).collect();
    if normalized {
        let total: f64 = rho.iter().sum();
        for x in &mut rho {
            *x /= total;
        }
    }
    Ok(rho)
}

/// Output of [`value_iteration`].
#[derive(Debug, Clone)]
pub struct OptimalSolution {
    pub values: ValueTables,
    /// Greedy deterministic policy; ties go to the lowest action index.
    pub policy: TabularPolicy,
    pub eta_star: f64,
    pub sweeps: usize,
}

/// Bellman-max iteration until the sup-norm change drops below
/// `tol (1 - gamma) / (2 gamma)`, which puts the greedy values within `tol`
/// of `V*`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64) -> Result<OptimalSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance {tol} must be positive")));
    }
    let gamma = mdp.gamma;
    let threshold = if gamma > 0.0 {
        tol * (1.0 - gamma) / (2.0 * gamma)
    } else {
        f64::INFINITY
    };
    let na = mdp.num_actions;
    let mut v = vec![0.0; mdp.num_states];
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let q = mdp.q_from_v(&v);
        let next: Vec<f64> = q
            .chunks(na)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let change = next
            .iter()
            .zip(&v)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if change < threshold {
            break;
        }
    }
    let values = ValueTables::from_v(mdp, v);
    let actions: Vec<usize> = (0..mdp.num_states)
        .map(|s| argmax_lowest(values.q_row(s)))
        .collect();
    let policy = TabularPolicy::deterministic(na, &actions)?;
    let eta_star = dot(mdp.initial_dist(), &values.v);
    Ok(OptimalSolution {
        values,
        policy,
        eta_star,
        sweeps,
    })
}

/// Per-state greedy improvement of `pi` with respect to `Q_pi`.
pub fn greedy_step(mdp: &TabularMdp, pi: &TabularPolicy) -> Result<TabularPolicy> {
    let values = evaluate_policy(mdp, pi)?;
    greedy_from_values(mdp, &values)
}

pub(crate) fn greedy_from_values(mdp: &TabularMdp, values: &ValueTables) -> Result<TabularPolicy> {
    let actions: Vec<usize> = (0..mdp.num_states)
        .map(|s| argmax_lowest(values.q_row(s)))
        .collect();
    TabularPolicy::deterministic(mdp.num_actions, &actions)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
