//! Policy graph over a finite grid of tabular policies.
//!
//! Vertices are product-simplex grid points; an edge joins `pi1 -> pi2`
//! when `pi2` has strictly higher return and lies in the neighbourhood of
//! `pi1`, weighted by the drift `D^nu_{pi1}(pi2)`. Mirror learning with the
//! policy space restricted to the grid walks along these edges.

use std::cmp::Ordering;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use petgraph::algo::toposort;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::drift::{check_sampling, dirac_at, dirac_state, DriftSpec, NuKind, RowDrift};
use crate::error::{Error, Result};
use crate::experiment::u_beta;
use crate::mdp::{discounted_visitation, dot, evaluate_policy, value_iteration, TabularMdp, ValueTables};
use crate::mirror::{solve_update, SolverConfig};
use crate::neighbourhood::{Ball, NeighbourhoodSpec};
use crate::policy::{SoftmaxPolicy, TabularPolicy};

/// Largest number of grid vertices `build_dag` will enumerate.
pub const VERTEX_BUDGET: usize = 10_000;

/// Slack on the return comparisons used by path checks.
pub const PATH_TOL: f64 = 1e-8;

/// Value-iteration tolerance for the graph's oracle.
const ORACLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DagVertex {
    pub policy: TabularPolicy,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DagEdge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// Total drift of a vertex path against the path-specific bound
/// `(eta* - eta(pi_0)) / U_beta` and the uniform bound `(eta* + V_max) / U_beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathWeight {
    pub total_weight: f64,
    pub path_bound: f64,
    pub uniform_bound: f64,
}

impl PathWeight {
    pub fn path_margin(&self) -> f64 {
        self.path_bound - self.total_weight
    }

    pub fn uniform_margin(&self) -> f64 {
        self.uniform_bound - self.total_weight
    }

    pub fn within_bounds(&self, tol: f64) -> bool {
        self.path_margin() >= -tol && self.uniform_margin() >= -tol
    }
}

/// Per-vertex data reused by every pair that starts there.
struct Centre {
    values: ValueTables,
    ball: Ball,
    drift: RowDrift,
    /// `nu` for the kinds that do not depend on the candidate.
    nu: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PolicyDag {
    mdp: TabularMdp,
    beta: Vec<f64>,
    drift: DriftSpec,
    neigh: NeighbourhoodSpec,
    grid_step: f64,
    vertices: Vec<DagVertex>,
    edges: Vec<DagEdge>,
    graph: DiGraph<usize, f64>,
    topo_order: Vec<usize>,
    eta_star: f64,
    eps_grid: f64,
}

/// Enumerates the product grid at resolution `grid_step`, evaluates every
/// vertex exactly and adds every improving, admissible edge.
///
/// Policies at terminal states are fixed to uniform; they never affect the
/// return.
pub fn build_dag(
    mdp: &TabularMdp,
    grid_step: f64,
    drift: &DriftSpec,
    neigh: &NeighbourhoodSpec,
    beta: &[f64],
) -> Result<PolicyDag> {
    drift.validate()?;
    neigh.validate()?;
    if !drift.is_positive() {
        return Err(Error::InvalidConfig(format!(
            "policy graph needs a positive drift, got {}",
            drift.kind
        )));
    }
    check_sampling(mdp, beta)?;
    let rows = simplex_grid(mdp.num_actions(), grid_step)?;
    let decision = mdp.decision_states();
    let count = rows.len().checked_pow(decision.len() as u32).unwrap_or(usize::MAX);
    if count > VERTEX_BUDGET {
        return Err(Error::VertexBudget {
            count,
            limit: VERTEX_BUDGET,
        });
    }

    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut vertices = Vec::with_capacity(count);
    let mut centres = Vec::with_capacity(count);
    let mut digits = vec![0usize; decision.len()];
    for _ in 0..count {
        let mut probs = vec![1.0 / na as f64; ns * na];
        for (k, &s) in decision.iter().enumerate() {
            probs[s * na..(s + 1) * na].copy_from_slice(&rows[digits[k]]);
        }
        let policy = TabularPolicy::new(ns, na, probs)?;
        let values = evaluate_policy(mdp, &policy)?;
        let eta = dot(mdp.initial_dist(), &values.v);
        let nu = match drift.nu_kind {
            NuKind::MatchBeta => Some(beta.to_vec()),
            NuKind::RhoBar => Some(discounted_visitation(mdp, &policy, true)?),
            NuKind::DiracMax => None,
        };
        centres.push(Centre {
            ball: Ball::new(neigh, mdp, &policy, beta, &values.adv)?,
            drift: RowDrift::new(drift, mdp.gamma(), &values.adv),
            values,
            nu,
        });
        vertices.push(DagVertex { policy, eta });
        // Mixed-radix increment, last decision state fastest.
        for d in digits.iter_mut().rev() {
            *d += 1;
            if *d < rows.len() {
                break;
            }
            *d = 0;
        }
    }

    let mut by_eta: Vec<usize> = (0..count).collect();
    by_eta.sort_by(|&a, &b| vertices[a].eta.total_cmp(&vertices[b].eta).then(a.cmp(&b)));
    let mut edges = Vec::new();
    for (pos, &i) in by_eta.iter().enumerate() {
        let c = &centres[i];
        for &j in &by_eta[pos + 1..] {
            // Strict improvement keeps the graph acyclic.
            if vertices[j].eta <= vertices[i].eta {
                continue;
            }
            let (pi, pj) = (&vertices[i].policy, &vertices[j].policy);
            if c.ball.pair_margin(pi, pj, &c.values.adv) < 0.0 {
                continue;
            }
            let weight = pair_drift(c, beta, pi, pj).1;
            edges.push(DagEdge { from: i, to: j, weight });
        }
    }
    edges.sort_by(|a, b| (a.from, a.to).cmp(&(b.from, b.to)));

    let mut graph = DiGraph::with_capacity(count, edges.len());
    let nodes: Vec<NodeIndex> = (0..count).map(|i| graph.add_node(i)).collect();
    for e in &edges {
        graph.add_edge(nodes[e.from], nodes[e.to], e.weight);
    }
    let topo_order = toposort(&graph, None)
        .map_err(|c| Error::InvalidConfig(format!("policy graph has a cycle through {}", c.node_id().index())))?
        .into_iter()
        .map(|n| graph[n])
        .collect();

    let eta_star = value_iteration(mdp, ORACLE_TOL)?.eta_star;
    let adv_scale = centres
        .iter()
        .flat_map(|c| c.values.adv.iter())
        .fold(0.0_f64, |m, a| m.max(a.abs()));
    Ok(PolicyDag {
        mdp: mdp.clone(),
        beta: beta.to_vec(),
        drift: *drift,
        neigh: *neigh,
        grid_step,
        vertices,
        edges,
        graph,
        topo_order,
        eta_star,
        eps_grid: grid_step * adv_scale,
    })
}

/// Per-state drifts of `pj` against `pi` and their `nu`-expectation.
fn pair_drift(c: &Centre, beta: &[f64], pi: &TabularPolicy, pj: &TabularPolicy) -> (Vec<f64>, f64) {
    let na = pi.num_actions();
    let per_state: Vec<f64> = (0..pi.num_states())
        .map(|s| c.drift.value(pi.row(s), pj.row(s), &c.values.adv[s * na..(s + 1) * na]))
        .collect();
    let expected = match &c.nu {
        Some(nu) => dot(nu, &per_state),
        None => per_state[dirac_state(beta, &per_state)],
    };
    (per_state, expected)
}

/// All points of the `A`-simplex whose coordinates are multiples of
/// `step`, in lexicographic order of their coordinate vectors.
pub fn simplex_grid(num_actions: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    let m = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || (m * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "grid step {step} must divide 1"
        )));
    }
    let m = m as usize;
    let mut out = Vec::new();
    let mut counts = vec![0usize; num_actions];
    compositions(m, 0, &mut counts, &mut out);
    Ok(out
        .into_iter()
        .map(|c| c.iter().map(|&k| k as f64 / m as f64).collect())
        .collect())
}

fn compositions(left: usize, idx: usize, counts: &mut [usize], out: &mut Vec<Vec<usize>>) {
    if idx + 1 == counts.len() {
        counts[idx] = left;
        out.push(counts.to_vec());
        return;
    }
    for k in 0..=left {
        counts[idx] = k;
        compositions(left - k, idx + 1, counts, out);
    }
}

impl PolicyDag {
    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn drift(&self) -> &DriftSpec {
        &self.drift
    }

    pub fn neighbourhood(&self) -> &NeighbourhoodSpec {
        &self.neigh
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn vertices(&self) -> &[DagVertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[DagEdge] {
        &self.edges
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// A topological order of the vertices.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn eta_star(&self) -> f64 {
        self.eta_star
    }

    /// Discretisation slack `grid_step * max |A_pi(s, a)|` over all vertices.
    pub fn eps_grid(&self) -> f64 {
        self.eps_grid
    }

    /// `min_s d(s) / beta(s)`.
    pub fn u_beta(&self) -> f64 {
        u_beta(&self.mdp, &self.beta)
    }

    fn check_vertex(&self, v: usize) -> Result<()> {
        if v >= self.vertices.len() {
            return Err(Error::DimensionMismatch {
                what: "vertex index",
                expected: self.vertices.len(),
                got: v,
            });
        }
        Ok(())
    }

    pub fn outgoing_exists(&self, v: usize) -> Result<bool> {
        self.check_vertex(v)?;
        Ok(self
            .graph
            .neighbors(NodeIndex::new(v))
            .next()
            .is_some())
    }

    pub fn edge_weight(&self, from: usize, to: usize) -> Option<f64> {
        if from.max(to) >= self.vertices.len() {
            return None;
        }
        self.graph
            .find_edge(NodeIndex::new(from), NodeIndex::new(to))
            .map(|e| self.graph[e])
    }

    /// Vertices without outgoing edges.
    pub fn sinks(&self) -> Vec<usize> {
        (0..self.vertices.len())
            .filter(|&v| self.graph.neighbors(NodeIndex::new(v)).next().is_none())
            .collect()
    }

    /// Vertices below `eta* - eps_grid` with no way out; empty when the
    /// graph reproduces the outgoing-edge property.
    pub fn stranded_vertices(&self) -> Vec<usize> {
        let cutoff = self.eta_star - self.eps_grid;
        self.sinks()
            .into_iter()
            .filter(|&v| self.vertices[v].eta <= cutoff)
            .collect()
    }

    /// Sums edge weights along `path`. Repeated consecutive vertices add
    /// nothing; any other consecutive pair must be an edge.
    pub fn trace_path_weight(&self, path: &[usize]) -> Result<PathWeight> {
        let first = *path.first().ok_or(Error::EmptyBatch)?;
        self.check_vertex(first)?;
        let mut total = 0.0;
        for pair in path.windows(2) {
            self.check_vertex(pair[1])?;
            if pair[0] == pair[1] {
                continue;
            }
            total += self
                .edge_weight(pair[0], pair[1])
                .ok_or(Error::DisconnectedPath {
                    from: pair[0],
                    to: pair[1],
                })?;
        }
        let u = self.u_beta();
        Ok(PathWeight {
            total_weight: total,
            path_bound: (self.eta_star - self.vertices[first].eta).max(0.0) / u,
            uniform_bound: (self.eta_star + self.mdp.v_max()) / u,
        })
    }

    /// Nearest vertex in sup-norm; ties go to the lexicographically
    /// smallest probability vector.
    pub fn snap(&self, pi: &TabularPolicy) -> Result<usize> {
        pi.check_shape(self.mdp.num_states(), self.mdp.num_actions())?;
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (v, vertex) in self.vertices.iter().enumerate() {
            let dist = vertex
                .policy
                .probs()
                .iter()
                .zip(pi.probs())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            let better = match dist.total_cmp(&best_dist) {
                Ordering::Less => true,
                Ordering::Equal => lex_less(vertex.policy.probs(), self.vertices[best].policy.probs()),
                Ordering::Greater => false,
            };
            if better {
                best = v;
                best_dist = dist;
            }
        }
        Ok(best)
    }

    /// Snaps every policy and drops consecutive repeats.
    pub fn snap_path(&self, policies: &[TabularPolicy]) -> Result<Vec<usize>> {
        let mut path: Vec<usize> = Vec::with_capacity(policies.len());
        for pi in policies {
            let v = self.snap(pi)?;
            if path.last() != Some(&v) {
                path.push(v);
            }
        }
        Ok(path)
    }

    /// One mirror update with the policy space restricted to the grid:
    /// the admissible vertex maximising `E_beta[M V_pi]`. Staying put wins
    /// ties, then the lowest index.
    pub fn grid_mirror_step(&self, v: usize) -> Result<usize> {
        self.check_vertex(v)?;
        let pi = &self.vertices[v].policy;
        let values = evaluate_policy(&self.mdp, pi)?;
        let centre = Centre {
            ball: Ball::new(&self.neigh, &self.mdp, pi, &self.beta, &values.adv)?,
            drift: RowDrift::new(&self.drift, self.mdp.gamma(), &values.adv),
            nu: match self.drift.nu_kind {
                NuKind::MatchBeta => Some(self.beta.clone()),
                NuKind::RhoBar => Some(discounted_visitation(&self.mdp, pi, true)?),
                NuKind::DiracMax => None,
            },
            values,
        };
        let na = self.mdp.num_actions();
        // Relative to E_beta[V_pi], which every candidate shares.
        let gain = |u: usize| -> f64 {
            let pu = &self.vertices[u].policy;
            let (per_state, _) = pair_drift(&centre, &self.beta, pi, pu);
            let nu = centre
                .nu
                .clone()
                .unwrap_or_else(|| dirac_at(per_state.len(), dirac_state(&self.beta, &per_state)));
            (0..self.mdp.num_states())
                .map(|s| {
                    let shift: f64 = (0..na)
                        .map(|a| (pu.prob(s, a) - pi.prob(s, a)) * centre.values.adv(s, a))
                        .sum();
                    let penalty = if self.beta[s] > 0.0 { nu[s] * per_state[s] } else { 0.0 };
                    self.beta[s] * shift - penalty
                })
                .sum()
        };
        let mut best = v;
        let mut best_gain = 0.0_f64;
        for u in 0..self.vertices.len() {
            if u == v || centre.ball.pair_margin(pi, &self.vertices[u].policy, &centre.values.adv) < 0.0 {
                continue;
            }
            let g = gain(u);
            if g > best_gain + PATH_TOL * (1.0 + best_gain.abs()) {
                best = u;
                best_gain = g;
            }
        }
        Ok(best)
    }

    /// Iterates [`PolicyDag::grid_mirror_step`] from `start` for at most
    /// `steps` updates, stopping early at a fixed point.
    pub fn grid_mirror_path(&self, start: usize, steps: usize) -> Result<Vec<usize>> {
        let mut path = vec![start];
        let mut v = start;
        for _ in 0..steps {
            let next = self.grid_mirror_step(v)?;
            if next == v {
                break;
            }
            path.push(next);
            v = next;
        }
        Ok(path)
    }

    /// Policies visited by the continuous mirror update from `start`, using
    /// this graph's drift, neighbourhood and sampling distribution.
    pub fn continuous_trajectory(
        &self,
        start: &SoftmaxPolicy,
        iterations: usize,
        solver: &SolverConfig,
    ) -> Result<Vec<TabularPolicy>> {
        let mut logits = start.clone();
        let mut out = vec![logits.to_simplex()?];
        for _ in 0..iterations {
            let res = solve_update(&self.mdp, &logits, &self.drift, &self.neigh, &self.beta, solver)?;
            out.push(res.new_policy);
            logits = res.new_logits;
        }
        Ok(out)
    }

    /// Writes `vertices.csv` (`idx,eta`) and `edges.csv`
    /// (`from_idx,to_idx,weight`) into `dir`.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("vertices.csv"))?));
        w.write_record(["idx", "eta"])?;
        for (i, v) in self.vertices.iter().enumerate() {
            w.write_record([i.to_string(), format!("{:?}", v.eta)])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("edges.csv"))?));
        w.write_record(["from_idx", "to_idx", "weight"])?;
        for e in &self.edges {
            w.write_record([e.from.to_string(), e.to.to_string(), format!("{:?}", e.weight)])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
    }
    false
}
