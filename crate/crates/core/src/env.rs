//! Benchmark MDPs: the one-shot game, the five-state chain, the bomb
//! gridworld, a one-state bandit for policy-grid experiments, and seeded
//! random MDPs for property tests.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

/// Rewards of the five actions in the one-shot game.
pub const SINGLE_STEP_REWARDS: [f64; 5] = [10.0, 0.0, 1.0, 0.0, 5.0];

/// Discount used for the one-shot game; it never affects returns.
pub const SINGLE_STEP_GAMMA: f64 = 0.99;

/// One decision state whose every action ends the episode.
///
/// State 0 decides, state 1 is the absorbing terminal.
pub fn build_single_step() -> TabularMdp {
    let na = SINGLE_STEP_REWARDS.len();
    let mut reward = vec![0.0; 2 * na];
    reward[..na].copy_from_slice(&SINGLE_STEP_REWARDS);
    let mut transition = vec![0.0; 2 * na * 2];
    for a in 0..na {
        transition[a * 2 + 1] = 1.0;
        transition[(na + a) * 2 + 1] = 1.0;
    }
    TabularMdp::new(2, na, reward, transition, SINGLE_STEP_GAMMA, vec![1.0, 0.0], &[1])
        .expect("single-step game is well formed")
}

pub const CHAIN_LEN: usize = 5;
pub const CHAIN_GAMMA: f64 = 0.999;
pub const CHAIN_LEFT: usize = 0;
pub const CHAIN_STAY: usize = 1;
pub const CHAIN_RIGHT: usize = 2;

/// Five states in a line plus a terminal (index 5).
///
/// Left pays `+0.1`, stay pays `0`, right pays `-0.1`. Leaving the line on
/// the left pays `-10` and terminates; leaving on the right pays `+10` and
/// terminates.
pub fn build_chain() -> TabularMdp {
    let ns = CHAIN_LEN + 1;
    let na = 3;
    let term = CHAIN_LEN;
    let mut reward = vec![0.0; ns * na];
    let mut transition = vec![0.0; ns * na * ns];
    let mut set = |s: usize, a: usize, r: f64, next: usize| {
        reward[s * na + a] = r;
        transition[(s * na + a) * ns + next] = 1.0;
    };
    for s in 0..CHAIN_LEN {
        if s == 0 {
            set(s, CHAIN_LEFT, -10.0, term);
        } else {
            set(s, CHAIN_LEFT, 0.1, s - 1);
        }
        set(s, CHAIN_STAY, 0.0, s);
        if s + 1 == CHAIN_LEN {
            set(s, CHAIN_RIGHT, 10.0, term);
        } else {
            set(s, CHAIN_RIGHT, -0.1, s + 1);
        }
    }
    for a in 0..na {
        set(term, a, 0.0, term);
    }
    let mut d = vec![1.0 / CHAIN_LEN as f64; ns];
    d[term] = 0.0;
    TabularMdp::new(ns, na, reward, transition, CHAIN_GAMMA, d, &[term])
        .expect("chain game is well formed")
}

/// Gridworld actions in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [Self::Up, Self::Down, Self::Left, Self::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            Self::Up => (1, 0),
            Self::Down => (-1, 0),
            Self::Left => (0, -1),
            Self::Right => (0, 1),
        }
    }
}

/// Layout of a gridworld. Cells are `(row, col)` with row 0 at the bottom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub barrier_cells: Vec<(usize, usize)>,
    pub goal_cell: (usize, usize),
    pub bomb_cell: (usize, usize),
    pub step_reward: f64,
    pub bomb_reward: f64,
    pub gamma: f64,
}

impl Default for GridSpec {
    /// 5x5 grid, goal top-right, bomb bottom-left, and a wall along row 3
    /// that leaves a single gap in column 0.
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            barrier_cells: vec![(3, 1), (3, 2), (3, 3), (3, 4)],
            goal_cell: (4, 4),
            bomb_cell: (0, 0),
            step_reward: -1.0,
            bomb_reward: -100.0,
            gamma: 0.999,
        }
    }
}

/// A gridworld MDP together with its cell/state correspondence.
#[derive(Debug, Clone)]
pub struct Gridworld {
    pub spec: GridSpec,
    pub mdp: TabularMdp,
    /// `cells[state]` is the grid cell of each state.
    pub cells: Vec<(usize, usize)>,
}

impl Gridworld {
    pub fn state_of(&self, cell: (usize, usize)) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }
}

impl GridSpec {
    fn in_bounds(&self, (r, c): (usize, usize)) -> bool {
        r < self.height && c < self.width
    }

    fn is_barrier(&self, cell: (usize, usize)) -> bool {
        self.barrier_cells.contains(&cell)
    }

    /// Cell reached from `cell` under `action`; blocked moves stay put.
    fn step(&self, (r, c): (usize, usize), action: GridAction) -> (usize, usize) {
        let (dr, dc) = action.delta();
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr < 0 || nc < 0 {
            return (r, c);
        }
        let next = (nr as usize, nc as usize);
        if !self.in_bounds(next) || self.is_barrier(next) {
            return (r, c);
        }
        next
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad("grid must be non-empty".into());
        }
        for &cell in self.barrier_cells.iter().chain([&self.goal_cell, &self.bomb_cell]) {
            if !self.in_bounds(cell) {
                return bad(format!("cell {cell:?} is outside the grid"));
            }
        }
        if self.goal_cell == self.bomb_cell {
            return bad("goal and bomb share a cell".into());
        }
        if self.is_barrier(self.goal_cell) || self.is_barrier(self.bomb_cell) {
            return bad("barrier covers the goal or the bomb".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        // Every free cell must reach the goal without passing the bomb.
        let mut seen = vec![vec![false; self.width]; self.height];
        let mut queue = VecDeque::from([self.goal_cell]);
        seen[self.goal_cell.0][self.goal_cell.1] = true;
        while let Some(cell) = queue.pop_front() {
            for action in GridAction::ALL {
                let next = self.step(cell, action);
                if next != self.bomb_cell && !seen[next.0][next.1] {
                    seen[next.0][next.1] = true;
                    queue.push_back(next);
                }
            }
        }
        for r in 0..self.height {
            for c in 0..self.width {
                let cell = (r, c);
                if !seen[r][c] && !self.is_barrier(cell) && cell != self.bomb_cell {
                    return bad(format!("cell {cell:?} cannot reach the goal"));
                }
            }
        }
        Ok(())
    }

    /// Text map, top row first: `#` barrier, `G` goal, `B` bomb, `.` free.
    pub fn to_text_map(&self) -> String {
        let mut out = String::new();
        for r in (0..self.height).rev() {
            for c in 0..self.width {
                let cell = (r, c);
                out.push(if cell == self.goal_cell {
                    'G'
                } else if cell == self.bomb_cell {
                    'B'
                } else if self.is_barrier(cell) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    /// Builds the MDP. Barrier cells are not states; goal and bomb are
    /// absorbing terminals; `d` is uniform over the remaining cells.
    pub fn build(&self) -> Result<Gridworld> {
        self.validate()?;
        let cells: Vec<(usize, usize)> = (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&cell| !self.is_barrier(cell))
            .collect();
        let ns = cells.len();
        let na = GridAction::ALL.len();
        let index = |cell: (usize, usize)| cells.iter().position(|&c| c == cell).unwrap();
        let goal = index(self.goal_cell);
        let bomb = index(self.bomb_cell);

        let mut reward = vec![0.0; ns * na];
        let mut transition = vec![0.0; ns * na * ns];
        for (s, &cell) in cells.iter().enumerate() {
            for (a, &action) in GridAction::ALL.iter().enumerate() {
                let (next, r) = if s == goal || s == bomb {
                    (s, 0.0)
                } else {
                    let n = index(self.step(cell, action));
                    let r = if n == bomb { self.bomb_reward } else { self.step_reward };
                    (n, r)
                };
                reward[s * na + a] = r;
                transition[(s * na + a) * ns + next] = 1.0;
            }
        }
        let free = ns - 2;
        let d: Vec<f64> = (0..ns)
            .map(|s| if s == goal || s == bomb { 0.0 } else { 1.0 / free as f64 })
            .collect();
        let mdp = TabularMdp::new(ns, na, reward, transition, self.gamma, d, &[goal, bomb])?;
        Ok(Gridworld {
            spec: self.clone(),
            mdp,
            cells,
        })
    }
}

/// The default gridworld.
pub fn build_gridworld() -> TabularMdp {
    GridSpec::default()
        .build()
        .expect("default gridworld is well formed")
        .mdp
}

pub const BANDIT_GAMMA: f64 = 0.9;

/// One self-looping state with two actions paying `(1, 0)`, so that
/// `eta = p(a0) / (1 - gamma)`.
pub fn build_bandit() -> TabularMdp {
    TabularMdp::new(1, 2, vec![1.0, 0.0], vec![1.0, 1.0], BANDIT_GAMMA, vec![1.0], &[])
        .expect("bandit is well formed")
}

/// Random MDP with flat-Dirichlet transition rows, rewards uniform on
/// `[-1, 1]`, uniform `d` and no terminal states. Deterministic in `seed`.
pub fn build_random_mdp(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    seed: u64,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidConfig("random MDP needs states and actions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reward: Vec<f64> = (0..num_states * num_actions)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        transition.extend(flat_dirichlet(&mut rng, num_states));
    }
    let d = vec![1.0 / num_states as f64; num_states];
    TabularMdp::new(num_states, num_actions, reward, transition, gamma, d, &[])
}

/// Uniform sample from the simplex via normalised unit exponentials.
pub(crate) fn flat_dirichlet<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = x.iter().sum();
    for v in &mut x {
        *v /= total;
    }
    x
}

/// Shape of the random MDP behind the `random` environment name.
pub const RANDOM_ENV_STATES: usize = 5;
pub const RANDOM_ENV_ACTIONS: usize = 3;
pub const RANDOM_ENV_GAMMA: f64 = 0.9;

/// Environment names understood by the experiment layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvName {
    SingleStep,
    Chain,
    Gridworld,
    Bandit,
    Random,
}

impl EnvName {
    pub const ALL: [EnvName; 5] = [
        Self::SingleStep,
        Self::Chain,
        Self::Gridworld,
        Self::Bandit,
        Self::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::SingleStep => "single-step",
            Self::Chain => "chain",
            Self::Gridworld => "gridworld",
            Self::Bandit => "bandit",
            Self::Random => "random",
        }
    }

    /// Builds the MDP; `seed` only matters for `random`.
    pub fn build(self, seed: u64) -> Result<TabularMdp> {
        Ok(match self {
            Self::SingleStep => build_single_step(),
            Self::Chain => build_chain(),
            Self::Gridworld => build_gridworld(),
            Self::Bandit => build_bandit(),
            Self::Random => {
                build_random_mdp(RANDOM_ENV_STATES, RANDOM_ENV_ACTIONS, RANDOM_ENV_GAMMA, seed)?
            }
        })
    }
}

impl fmt::Display for EnvName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|e| e.name() == norm)
            .ok_or_else(|| Error::UnknownName {
                vocabulary: "environment",
                name: s.to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{expected_return, value_iteration};
    use crate::policy::TabularPolicy;

    #[test]
    fn single_step_returns() {
        let mdp = build_single_step();
        let uniform = TabularPolicy::uniform(2, 5);
        assert!((expected_return(&mdp, &uniform).unwrap() - 3.2).abs() < 1e-12);
        for (a, &r) in SINGLE_STEP_REWARDS.iter().enumerate() {
            let pi = TabularPolicy::deterministic(5, &[a, 0]).unwrap();
            assert!((expected_return(&mdp, &pi).unwrap() - r).abs() < 1e-12);
        }
        assert_eq!(value_iteration(&mdp, 1e-9).unwrap().eta_star, 10.0);
    }

    #[test]
    fn chain_edges() {
        let mdp = build_chain();
        let stay = TabularPolicy::deterministic(3, &[CHAIN_STAY; 6]).unwrap();
        assert_eq!(expected_return(&mdp, &stay).unwrap(), 0.0);
        let left = TabularPolicy::deterministic(3, &[CHAIN_LEFT; 6]).unwrap();
        let v = crate::mdp::evaluate_policy(&mdp, &left).unwrap().v;
        assert!((v[0] + 10.0).abs() < 1e-12);
        let right = TabularPolicy::deterministic(3, &[CHAIN_RIGHT; 6]).unwrap();
        let v = crate::mdp::evaluate_policy(&mdp, &right).unwrap().v;
        assert!((v[4] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn chain_optimum_matches_closed_form() {
        // Walking right from state s: (4 - s) steps at -0.1, then +10.
        let g = CHAIN_GAMMA;
        let mut total = 0.0;
        for s in 0..CHAIN_LEN {
            let k = (CHAIN_LEN - 1 - s) as i32;
            let walk: f64 = (0..k).map(|t| -0.1 * g.powi(t)).sum();
            total += walk + 10.0 * g.powi(k);
        }
        let oracle = total / CHAIN_LEN as f64;
        let eta_star = value_iteration(&build_chain(), 1e-10).unwrap().eta_star;
        assert!((eta_star - oracle).abs() < 1e-9, "{eta_star} vs {oracle}");
        assert!((eta_star - 9.7).abs() <= 0.15);
    }

    #[test]
    fn gridworld_layout_and_optimum() {
        let spec = GridSpec::default();
        assert_eq!(spec.to_text_map(), "....G\n.####\n.....\n.....\nB....\n");
        let world = spec.build().unwrap();
        assert_eq!(world.mdp.num_states(), 21);
        assert_eq!(world.mdp.decision_states().len(), 19);
        let opt = value_iteration(&world.mdp, 1e-10).unwrap();
        assert!((-10.0..=-5.0).contains(&opt.eta_star), "{}", opt.eta_star);
        let next_to_goal = world.state_of((4, 3)).unwrap();
        assert!((opt.values.v[next_to_goal] + 1.0).abs() < 1e-9);
        // Shortest-path oracle: each cell pays one unit per step to the goal.
        let g: f64 = spec.gamma;
        let bfs_eta = shortest_path_eta(&world, g);
        assert!((opt.eta_star - bfs_eta).abs() < 1e-8);
    }

    fn shortest_path_eta(world: &Gridworld, g: f64) -> f64 {
        let spec = &world.spec;
        let mut dist = vec![usize::MAX; world.cells.len()];
        let goal = world.state_of(spec.goal_cell).unwrap();
        dist[goal] = 0;
        let mut queue = VecDeque::from([spec.goal_cell]);
        while let Some(cell) = queue.pop_front() {
            let here = dist[world.state_of(cell).unwrap()];
            for (s, &other) in world.cells.iter().enumerate() {
                if other == spec.bomb_cell || dist[s] != usize::MAX {
                    continue;
                }
                if GridAction::ALL.iter().any(|&a| spec.step(other, a) == cell) {
                    dist[s] = here + 1;
                    queue.push_back(other);
                }
            }
        }
        let d = world.mdp.initial_dist();
        (0..world.cells.len())
            .filter(|&s| d[s] > 0.0)
            .map(|s| d[s] * -(0..dist[s]).map(|t| g.powi(t as i32)).sum::<f64>())
            .sum()
    }

    #[test]
    fn bomb_pays_once_and_terminates() {
        let world = GridSpec::default().build().unwrap();
        let above_bomb = world.state_of((1, 0)).unwrap();
        let bomb = world.state_of((0, 0)).unwrap();
        let down = 1;
        assert_eq!(world.mdp.reward(above_bomb, down), -100.0);
        assert_eq!(world.mdp.transition(above_bomb, down)[bomb], 1.0);
        assert!(world.mdp.is_terminal(bomb));
    }

    #[test]
    fn walls_hold_the_agent_in_place() {
        let world = GridSpec::default().build().unwrap();
        let s = world.state_of((2, 2)).unwrap();
        assert_eq!(world.mdp.transition(s, 0)[s], 1.0);
        assert_eq!(world.mdp.reward(s, 0), -1.0);
        let corner = world.state_of((0, 4)).unwrap();
        assert_eq!(world.mdp.transition(corner, 3)[corner], 1.0);
    }

    #[test]
    fn rejects_bad_layouts() {
        let mut sealed = GridSpec::default();
        sealed.barrier_cells.push((3, 0));
        assert!(sealed.validate().is_err());
        let clash = GridSpec {
            bomb_cell: (4, 4),
            ..GridSpec::default()
        };
        assert!(clash.validate().is_err());
        let covered = GridSpec {
            barrier_cells: vec![(4, 4)],
            ..GridSpec::default()
        };
        assert!(covered.validate().is_err());
    }

    #[test]
    fn random_mdp_is_seeded() {
        let a = build_random_mdp(4, 3, 0.9, 7).unwrap();
        let b = build_random_mdp(4, 3, 0.9, 7).unwrap();
        let c = build_random_mdp(4, 3, 0.9, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn names_round_trip() {
        for env in EnvName::ALL {
            assert_eq!(env.name().parse::<EnvName>().unwrap(), env);
        }
        assert_eq!("single_step".parse::<EnvName>().unwrap(), EnvName::SingleStep);
        assert!("maze".parse::<EnvName>().is_err());
    }
}
