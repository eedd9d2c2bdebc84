//! Reference solvers and result bookkeeping: nearest-neighbour construction,
//! its 2-opt refinement, exact Held-Karp for small TSPs, optimality gaps and
//! the published reference numbers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decoder::Trajectory;
use crate::error::{AgfnError, Result};
use crate::instance::{Instance, ProblemKind};
use crate::local_search::two_opt;

/// Largest instance [`held_karp`] accepts.
pub const HELD_KARP_MAX_NODES: usize = 14;

/// Greedy construction from node 0, always moving to the nearest feasible
/// node (ties to the lower index). CVRP returns to the depot when no
/// unvisited customer fits the remaining capacity.
pub fn nearest_neighbor(inst: &Instance) -> Trajectory {
    let n = inst.n_nodes();
    let mut visited = vec![false; n];
    visited[0] = true;
    let mut nodes = vec![0];
    let mut cur = 0;
    let mut left = inst.capacity;
    let mut remaining = n - 1;
    while remaining > 0 {
        let mut best: Option<(f64, usize)> = None;
        for v in 1..n {
            if visited[v] || (inst.is_cvrp() && inst.demands[v] > left) {
                continue;
            }
            let d = inst.dist(cur, v);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, v));
            }
        }
        match best {
            Some((_, v)) => {
                visited[v] = true;
                remaining -= 1;
                if inst.is_cvrp() {
                    left -= inst.demands[v];
                }
                nodes.push(v);
                cur = v;
            }
            None => {
                // only reachable for CVRP away from the depot
                nodes.push(0);
                cur = 0;
                left = inst.capacity;
            }
        }
    }
    if inst.is_cvrp() {
        nodes.push(0);
    }
    Trajectory::from_nodes(inst, nodes)
}

/// Nearest neighbour followed by 2-opt.
pub fn nearest_neighbor_two_opt(inst: &Instance) -> Trajectory {
    two_opt(&nearest_neighbor(inst), inst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactTour {
    pub length: f64,
    pub tour: Vec<usize>,
}

/// Optimal closed tour by bitmask dynamic programming over subsets of the
/// nodes other than 0.
pub fn held_karp(inst: &Instance) -> Result<ExactTour> {
    if inst.kind != ProblemKind::Tsp {
        return Err(AgfnError::Unsupported("Held-Karp solves TSP instances only".into()));
    }
    let n = inst.n_nodes();
    if n > HELD_KARP_MAX_NODES {
        return Err(AgfnError::Unsupported(format!(
            "Held-Karp refuses {n} nodes (limit {HELD_KARP_MAX_NODES})"
        )));
    }
    if n <= 2 {
        let tour: Vec<usize> = (0..n).collect();
        return Ok(ExactTour {
            length: inst.closed_length(&tour),
            tour,
        });
    }
    let m = n - 1;
    let full = 1usize << m;
    // dp[mask * m + j]: shortest path from 0 through `mask`, ending at node j + 1
    let mut dp = vec![f64::INFINITY; full * m];
    let mut parent = vec![usize::MAX; full * m];
    for j in 0..m {
        dp[(1 << j) * m + j] = inst.dist(0, j + 1);
    }
    for mask in 1..full {
        for j in 0..m {
            let cur = dp[mask * m + j];
            if mask & (1 << j) == 0 || cur.is_infinite() {
                continue;
            }
            for k in 0..m {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let next = mask | (1 << k);
                let cand = cur + inst.dist(j + 1, k + 1);
                if cand < dp[next * m + k] {
                    dp[next * m + k] = cand;
                    parent[next * m + k] = j;
                }
            }
        }
    }
    let last_mask = full - 1;
    let (mut end, mut length) = (0, f64::INFINITY);
    for j in 0..m {
        let total = dp[last_mask * m + j] + inst.dist(j + 1, 0);
        if total < length {
            length = total;
            end = j;
        }
    }
    let mut tour = Vec::with_capacity(n);
    let (mut mask, mut j) = (last_mask, end);
    while j != usize::MAX {
        tour.push(j + 1);
        let p = parent[mask * m + j];
        mask &= !(1 << j);
        j = p;
    }
    tour.push(0);
    tour.reverse();
    Ok(ExactTour { length, tour })
}

/// `(obj - reference) / reference * 100`.
pub fn gap_pct(obj: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(AgfnError::Domain("gap against a zero reference objective".into()));
    }
    Ok((obj - reference) / reference * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub reference: String,
    /// Per-instance objectives by method.
    pub objectives: BTreeMap<String, Vec<f64>>,
    /// Per-instance gaps (%) by method.
    pub gaps: BTreeMap<String, Vec<f64>>,
    pub mean_obj: BTreeMap<String, f64>,
    pub mean_gap: BTreeMap<String, f64>,
}

pub fn gap_report(objectives: &BTreeMap<String, Vec<f64>>, reference: &str) -> Result<GapReport> {
    let refs = objectives
        .get(reference)
        .ok_or_else(|| AgfnError::Config(format!("reference method '{reference}' has no results")))?;
    let mut gaps = BTreeMap::new();
    let mut mean_obj = BTreeMap::new();
    let mut mean_gap = BTreeMap::new();
    for (method, objs) in objectives {
        if objs.len() != refs.len() {
            return Err(AgfnError::shape(
                "gap_report",
                format!("{method} has {} results, reference has {}", objs.len(), refs.len()),
            ));
        }
        let g = objs
            .iter()
            .zip(refs)
            .map(|(&o, &r)| gap_pct(o, r))
            .collect::<Result<Vec<_>>>()?;
        let k = objs.len().max(1) as f64;
        mean_obj.insert(method.clone(), objs.iter().sum::<f64>() / k);
        mean_gap.insert(method.clone(), g.iter().sum::<f64>() / k);
        gaps.insert(method.clone(), g);
    }
    Ok(GapReport {
        reference: reference.to_string(),
        objectives: objectives.clone(),
        gaps,
        mean_obj,
        mean_gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub problem: ProblemKind,
    pub dataset: String,
    pub size: Option<usize>,
    pub method: String,
    pub obj: Option<f64>,
    pub gap_pct: Option<f64>,
    pub time_s: Option<f64>,
}

/// Published numbers shipped with the crate (transcribed, never recomputed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceData {
    pub note: String,
    pub entries: Vec<ReferenceEntry>,
}

const REFERENCE_JSON: &str = include_str!("../data/reference_results.json");

impl ReferenceData {
    pub fn load() -> Result<Self> {
        Ok(serde_json::from_str(REFERENCE_JSON)?)
    }

    pub fn lookup(&self, problem: ProblemKind, size: usize, method: &str) -> Option<&ReferenceEntry> {
        self.entries
            .iter()
            .find(|e| e.problem == problem && e.size == Some(size) && e.method == method)
    }
}
