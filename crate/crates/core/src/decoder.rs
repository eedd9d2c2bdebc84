//! Route construction from a heatmap.
//!
//! A rollout starts at node 0 and repeatedly picks the next node from the
//! masked, renormalized heatmap scores of the current node's sparse
//! out-edges. With hybrid decoding each step flips a coin: with probability
//! `p` the next node is sampled, otherwise the most likely node is taken.
//! Either way the recorded log-probability is that of the distribution.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AgfnError, Result};
use crate::instance::{Instance, ProblemKind};
use crate::policy_net::Heatmap;
use crate::rng::{substream, Stream};
use crate::sparse_graph::SparseGraph;

/// A complete route.
///
/// TSP: a permutation of all nodes starting at 0 (the closing edge is
/// implicit). CVRP: starts and ends at the depot, with depot visits between
/// routes. `step_logp` has one entry per node after the first when the
/// trajectory came from a rollout, and is empty for routes built by other
/// means (local search, baselines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub nodes: Vec<usize>,
    pub step_logp: Vec<f64>,
    pub length: f64,
    pub instance_id: String,
}

impl Trajectory {
    pub fn from_nodes(inst: &Instance, nodes: Vec<usize>) -> Self {
        let length = route_length(inst, &nodes);
        Trajectory {
            nodes,
            step_logp: Vec::new(),
            length,
            instance_id: inst.name.clone(),
        }
    }

    pub fn log_pf(&self) -> f64 {
        self.step_logp.iter().sum()
    }

    /// CVRP routes without the depot, in visiting order. A TSP tour is one
    /// route of all nodes except the start.
    pub fn routes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut cur = Vec::new();
        for &v in &self.nodes[1..] {
            if v == 0 {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            } else {
                cur.push(v);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    /// `{instance, nodes, length}`.
    pub fn to_solution_json(&self) -> serde_json::Value {
        serde_json::json!({
            "instance": self.instance_id,
            "nodes": self.nodes,
            "length": self.length,
        })
    }

    /// TSPLib TOUR file (1-based node ids).
    pub fn to_tour_file(&self) -> String {
        let mut s = format!(
            "NAME : {}.tour\nCOMMENT : length {}\nTYPE : TOUR\nDIMENSION : {}\nTOUR_SECTION\n",
            self.instance_id,
            self.length,
            self.nodes.len()
        );
        for &v in &self.nodes {
            s += &format!("{}\n", v + 1);
        }
        s += "-1\nEOF\n";
        s
    }
}

/// Length of a trajectory's node list: closed tour for TSP, depot-bracketed
/// path for CVRP.
pub fn route_length(inst: &Instance, nodes: &[usize]) -> f64 {
    match inst.kind {
        ProblemKind::Tsp => inst.closed_length(nodes),
        ProblemKind::Cvrp => inst.path_length(nodes),
    }
}

/// Checks the permutation / capacity / depot-bracketing invariants.
pub fn validate_trajectory(traj: &Trajectory, inst: &Instance) -> Result<()> {
    let n = inst.n_nodes();
    let bad = |m: String| Err(AgfnError::Invariant(m));
    if traj.nodes.first() != Some(&0) {
        return bad("trajectory must start at node 0".into());
    }
    let mut seen = vec![false; n];
    match inst.kind {
        ProblemKind::Tsp => {
            if traj.nodes.len() != n {
                return bad(format!("TSP tour visits {} of {n} nodes", traj.nodes.len()));
            }
            for &v in &traj.nodes {
                if v >= n || seen[v] {
                    return bad(format!("node {v} repeated or out of range"));
                }
                seen[v] = true;
            }
        }
        ProblemKind::Cvrp => {
            if traj.nodes.last() != Some(&0) {
                return bad("CVRP trajectory must end at the depot".into());
            }
            let mut load = 0u32;
            for &v in &traj.nodes[1..] {
                if v >= n {
                    return bad(format!("node {v} out of range"));
                }
                if v == 0 {
                    load = 0;
                    continue;
                }
                if seen[v] {
                    return bad(format!("customer {v} visited twice"));
                }
                seen[v] = true;
                load += inst.demands[v];
                if load > inst.capacity {
                    return bad(format!("route load {load} exceeds capacity {}", inst.capacity));
                }
            }
            if let Some(missed) = (1..n).find(|&v| !seen[v]) {
                return bad(format!("customer {missed} never visited"));
            }
        }
    }
    if !traj.step_logp.is_empty() && traj.step_logp.len() != traj.nodes.len() - 1 {
        return bad("step_logp length does not match the number of steps".into());
    }
    let expect = route_length(inst, &traj.nodes);
    if (expect - traj.length).abs() > 1e-9 * expect.max(1.0) {
        return bad(format!("recorded length {} but route measures {expect}", traj.length));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Sample,
    Greedy,
    Hybrid,
}

impl std::str::FromStr for DecodeMode {
    type Err = AgfnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(DecodeMode::Sample),
            "greedy" => Ok(DecodeMode::Greedy),
            "hybrid" => Ok(DecodeMode::Hybrid),
            other => Err(AgfnError::Config(format!("unknown decode mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub hybrid_p: f64,
    pub n_rollouts: usize,
    pub seed: u64,
    pub temperature: f64,
}

impl DecodeConfig {
    /// Hybrid decoding, P = 0.05, 100 rollouts.
    pub fn test_time(seed: u64) -> Self {
        DecodeConfig {
            mode: DecodeMode::Hybrid,
            hybrid_p: 0.05,
            n_rollouts: 100,
            seed,
            temperature: 1.0,
        }
    }

    /// Pure sampling, 20 rollouts.
    pub fn training(seed: u64) -> Self {
        DecodeConfig {
            mode: DecodeMode::Sample,
            hybrid_p: 1.0,
            n_rollouts: 20,
            seed,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hybrid_p) {
            return Err(AgfnError::Config(format!("hybrid P = {} outside [0, 1]", self.hybrid_p)));
        }
        if !(self.temperature > 0.0) {
            return Err(AgfnError::Config("temperature must be positive".into()));
        }
        if self.n_rollouts == 0 {
            return Err(AgfnError::Config("n_rollouts must be positive".into()));
        }
        Ok(())
    }

    /// Probability of sampling (rather than taking the argmax) at each step.
    pub fn explore_probability(&self) -> f64 {
        match self.mode {
            DecodeMode::Sample => 1.0,
            DecodeMode::Greedy => 0.0,
            DecodeMode::Hybrid => self.hybrid_p,
        }
    }
}

/// Partial-route state.
#[derive(Debug, Clone)]
pub struct RouteState {
    pub current: usize,
    pub visited: Vec<bool>,
    pub remaining: usize,
    pub load_left: u32,
}

impl RouteState {
    pub fn start(inst: &Instance) -> Self {
        let n = inst.n_nodes();
        let mut visited = vec![false; n];
        visited[0] = true;
        RouteState {
            current: 0,
            visited,
            remaining: n - 1,
            load_left: inst.capacity,
        }
    }

    pub fn is_done(&self, inst: &Instance) -> bool {
        match inst.kind {
            ProblemKind::Tsp => self.remaining == 0,
            ProblemKind::Cvrp => self.remaining == 0 && self.current == 0,
        }
    }

    fn feasible_node(&self, inst: &Instance, v: usize) -> bool {
        match inst.kind {
            ProblemKind::Tsp => !self.visited[v],
            ProblemKind::Cvrp => {
                if v == 0 {
                    self.current != 0
                } else {
                    !self.visited[v] && inst.demands[v] <= self.load_left
                }
            }
        }
    }

    pub fn advance(&mut self, inst: &Instance, v: usize) {
        if inst.is_cvrp() && v == 0 {
            self.load_left = inst.capacity;
        } else {
            self.visited[v] = true;
            self.remaining -= 1;
            if inst.is_cvrp() {
                self.load_left -= inst.demands[v];
            }
        }
        self.current = v;
    }
}

/// Normalized distribution over the feasible next nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    pub nodes: Vec<usize>,
    /// Sparse edge index of each candidate; `None` for the distance-based
    /// fallback.
    pub edges: Option<Vec<usize>>,
    /// Unnormalized log weights.
    pub logits: Vec<f64>,
    pub log_norm: f64,
    pub probs: Vec<f64>,
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

impl StepDistribution {
    fn new(nodes: Vec<usize>, edges: Option<Vec<usize>>, logits: Vec<f64>) -> Self {
        let log_norm = log_sum_exp(&logits);
        let probs = logits.iter().map(|a| (a - log_norm).exp()).collect();
        StepDistribution {
            nodes,
            edges,
            logits,
            log_norm,
            probs,
        }
    }

    pub fn log_prob(&self, pos: usize) -> f64 {
        self.logits[pos] - self.log_norm
    }

    /// Most likely candidate; ties go to the lowest node index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.nodes.len() {
            let (a, b) = (self.logits[i], self.logits[best]);
            if a > b || (a == b && self.nodes[i] < self.nodes[best]) {
                best = i;
            }
        }
        best
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Feasible actions from `state`: unvisited (and, for CVRP, fitting) sparse
/// out-neighbours plus the depot when away from it, weighted by
/// `score^(1/temperature)`. Without any feasible sparse neighbour the full
/// feasible node set is used with weights `exp(-distance / temperature)`.
pub fn step_distribution(
    state: &RouteState,
    heat: &Heatmap,
    g: &SparseGraph,
    temperature: f64,
) -> Result<StepDistribution> {
    let inst = &*g.instance;
    let inv_t = 1.0 / temperature;
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut logits = Vec::new();
    for e in g.out_edges(state.current) {
        let v = g.dst[e];
        if state.feasible_node(inst, v) {
            nodes.push(v);
            edges.push(e);
            logits.push(heat.log_scores[e] * inv_t);
        }
    }
    if !nodes.is_empty() {
        return Ok(StepDistribution::new(nodes, Some(edges), logits));
    }
    for v in 0..inst.n_nodes() {
        if v != state.current && state.feasible_node(inst, v) {
            nodes.push(v);
            logits.push(-inst.dist(state.current, v) * inv_t);
        }
    }
    if nodes.is_empty() {
        return Err(AgfnError::Invariant(format!(
            "no feasible action from node {} with {} nodes left",
            state.current, state.remaining
        )));
    }
    Ok(StepDistribution::new(nodes, None, logits))
}

/// One route. `explore_p` is the per-step probability of sampling instead of
/// taking the argmax.
pub fn rollout_with(
    g: &SparseGraph,
    heat: &Heatmap,
    explore_p: f64,
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let inst = &*g.instance;
    if heat.len() != g.n_edges() {
        return Err(AgfnError::shape(
            "rollout",
            format!("heatmap has {} scores for {} edges", heat.len(), g.n_edges()),
        ));
    }
    let mut state = RouteState::start(inst);
    let mut nodes = vec![0];
    let mut step_logp = Vec::with_capacity(inst.n_nodes());
    while !state.is_done(inst) {
        let dist = step_distribution(&state, heat, g, temperature)?;
        let explore = rng.gen::<f64>() < explore_p;
        let pos = if explore { dist.sample(rng) } else { dist.argmax() };
        let v = dist.nodes[pos];
        step_logp.push(dist.log_prob(pos));
        state.advance(inst, v);
        nodes.push(v);
    }
    let length = route_length(inst, &nodes);
    Ok(Trajectory {
        nodes,
        step_logp,
        length,
        instance_id: inst.name.clone(),
    })
}

pub fn rollout(g: &SparseGraph, heat: &Heatmap, cfg: &DecodeConfig, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
    rollout_with(g, heat, cfg.explore_probability(), cfg.temperature, rng)
}

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub trajectories: Vec<Trajectory>,
    pub best: usize,
}

impl DecodeResult {
    pub fn best(&self) -> &Trajectory {
        &self.trajectories[self.best]
    }
}

/// `n_rollouts` independent rollouts (one for greedy); rollout `i` draws
/// from its own stream derived from `(cfg.seed, i)`.
pub fn decode_batch(g: &SparseGraph, heat: &Heatmap, cfg: &DecodeConfig) -> Result<DecodeResult> {
    cfg.validate()?;
    let n = if cfg.mode == DecodeMode::Greedy {
        1
    } else {
        cfg.n_rollouts
    };
    let trajectories = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, Stream::Decode, i as u64, 0);
            rollout(g, heat, cfg, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let best = trajectories
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.length.total_cmp(&b.1.length).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(DecodeResult { trajectories, best })
}

/// One step of a replayed trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplayStep {
    /// Chosen among sparse edges; `edges[chosen]` is the taken edge.
    Sparse { edges: Vec<usize>, chosen: usize },
    /// Fallback step whose probability does not depend on the heatmap.
    Fixed { log_prob: f64 },
}

/// Re-derives the per-step action sets of `traj` on `g`. Heatmap values only
/// matter for the log-probabilities, so any heatmap of the right size may be
/// passed for the structure.
pub fn replay(traj: &Trajectory, g: &SparseGraph, temperature: f64) -> Result<Vec<ReplayStep>> {
    let inst = &*g.instance;
    let dummy = Heatmap::uniform(g.n_edges(), 0.5);
    let mut state = RouteState::start(inst);
    if traj.nodes.first() != Some(&0) {
        return Err(AgfnError::Invariant("trajectory does not start at node 0".into()));
    }
    let mut steps = Vec::with_capacity(traj.nodes.len());
    for &v in &traj.nodes[1..] {
        if state.is_done(inst) {
            return Err(AgfnError::Invariant("trajectory continues after completion".into()));
        }
        let dist = step_distribution(&state, &dummy, g, temperature)?;
        let pos = dist.nodes.iter().position(|&u| u == v).ok_or_else(|| {
            AgfnError::Invariant(format!("step to node {v} is not a feasible action on this graph"))
        })?;
        steps.push(match dist.edges {
            Some(edges) => ReplayStep::Sparse { edges, chosen: pos },
            None => ReplayStep::Fixed {
                log_prob: dist.log_prob(pos),
            },
        });
        state.advance(inst, v);
    }
    if !state.is_done(inst) {
        return Err(AgfnError::Invariant("trajectory ends before completion".into()));
    }
    Ok(steps)
}
