//! Route improvement used to produce the discriminator's "true" solutions.
//!
//! `DestroyRepair` keeps a population of the `top_k` shortest solutions. In
//! each round every member spawns candidates by removing a random contiguous
//! run of customers (in visiting order) and reinserting them one by one at
//! the cheapest feasible position. `TwoOpt` runs first-improvement 2-opt on
//! every route. Neither variant ever returns a longer solution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{validate_trajectory, Trajectory};
use crate::error::{AgfnError, Result};
use crate::instance::{Instance, ProblemKind};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LsVariant {
    #[default]
    DestroyRepair,
    TwoOpt,
}

impl std::str::FromStr for LsVariant {
    type Err = AgfnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "destroy_repair" => Ok(LsVariant::DestroyRepair),
            "two_opt" => Ok(LsVariant::TwoOpt),
            other => Err(AgfnError::Config(format!("unknown local search '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalSearchConfig {
    pub rounds: usize,
    pub destroy_fraction: f64,
    pub candidates_per_round: usize,
    pub top_k: usize,
    pub variant: LsVariant,
    pub seed: u64,
}

impl Default for LocalSearchConfig {
    fn default() -> Self {
        LocalSearchConfig {
            rounds: 5,
            destroy_fraction: 0.2,
            candidates_per_round: 8,
            top_k: 4,
            variant: LsVariant::DestroyRepair,
            seed: 0,
        }
    }
}

impl LocalSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(AgfnError::Config("local search needs at least one round".into()));
        }
        if !(self.destroy_fraction > 0.0 && self.destroy_fraction < 1.0) {
            return Err(AgfnError::Config("destroy_fraction must lie in (0, 1)".into()));
        }
        if self.top_k == 0 || self.top_k > self.candidates_per_round {
            return Err(AgfnError::Config("need 1 <= top_k <= candidates_per_round".into()));
        }
        Ok(())
    }
}

/// Customer sequences of each route, without the depot / start node.
fn to_routes(traj: &Trajectory) -> Vec<Vec<usize>> {
    traj.routes()
}

fn to_nodes(routes: &[Vec<usize>], kind: ProblemKind) -> Vec<usize> {
    let mut nodes = vec![0];
    for r in routes {
        nodes.extend_from_slice(r);
        if kind == ProblemKind::Cvrp {
            nodes.push(0);
        }
    }
    nodes
}

/// Improves `traj` with the configured variant; randomness comes from
/// `cfg.seed` only.
pub fn improve(traj: &Trajectory, inst: &Instance, cfg: &LocalSearchConfig) -> Result<Trajectory> {
    cfg.validate()?;
    validate_trajectory(traj, inst)?;
    let out = match cfg.variant {
        LsVariant::DestroyRepair => destroy_repair(traj, inst, cfg),
        LsVariant::TwoOpt => two_opt(traj, inst),
    };
    Ok(out)
}

#[derive(Clone)]
struct Member {
    routes: Vec<Vec<usize>>,
    nodes: Vec<usize>,
    length: f64,
}

impl Member {
    fn new(routes: Vec<Vec<usize>>, inst: &Instance) -> Self {
        let nodes = to_nodes(&routes, inst.kind);
        let length = crate::decoder::route_length(inst, &nodes);
        Member { routes, nodes, length }
    }
}

pub fn destroy_repair(traj: &Trajectory, inst: &Instance, cfg: &LocalSearchConfig) -> Trajectory {
    let mut rng = substream(cfg.seed, Stream::LocalSearch, 0, 0);
    let start = Member {
        routes: to_routes(traj),
        nodes: traj.nodes.clone(),
        length: traj.length,
    };
    let order: Vec<usize> = start.routes.iter().flatten().copied().collect();
    let m = order.len();
    if m < 2 {
        return Trajectory::from_nodes(inst, traj.nodes.clone());
    }
    let q = ((cfg.destroy_fraction * m as f64).ceil() as usize).clamp(1, m);
    let mut pop = vec![start];
    for _ in 0..cfg.rounds {
        let mut next = pop.clone();
        for member in &pop {
            for _ in 0..cfg.candidates_per_round {
                let flat: Vec<usize> = member.routes.iter().flatten().copied().collect();
                let s = rng.gen_range(0..=m - q);
                let removed = &flat[s..s + q];
                let mut routes: Vec<Vec<usize>> = member
                    .routes
                    .iter()
                    .map(|r| r.iter().copied().filter(|c| !removed.contains(c)).collect::<Vec<_>>())
                    .filter(|r: &Vec<usize>| !r.is_empty() || inst.kind == ProblemKind::Tsp)
                    .collect();
                if routes.is_empty() {
                    routes.push(Vec::new());
                }
                for &c in removed {
                    cheapest_insertion(&mut routes, c, inst);
                }
                next.push(Member::new(routes, inst));
            }
        }
        // stable sort keeps earlier members first among equal lengths
        next.sort_by(|a, b| a.length.total_cmp(&b.length));
        let mut kept: Vec<Member> = Vec::with_capacity(cfg.top_k);
        for c in next {
            if kept.len() == cfg.top_k {
                break;
            }
            if !kept.iter().any(|k| k.nodes == c.nodes) {
                kept.push(c);
            }
        }
        pop = kept;
    }
    let best = &pop[0];
    Trajectory {
        nodes: best.nodes.clone(),
        step_logp: Vec::new(),
        length: best.length,
        instance_id: traj.instance_id.clone(),
    }
}

/// Inserts customer `c` where it adds the least length, scanning routes and
/// positions in order and keeping the first minimum. CVRP may also open a
/// new route (considered last).
fn cheapest_insertion(routes: &mut Vec<Vec<usize>>, c: usize, inst: &Instance) {
    let cvrp = inst.is_cvrp();
    let mut best: Option<(f64, usize, usize)> = None;
    for (ri, r) in routes.iter().enumerate() {
        if cvrp {
            let load: u32 = r.iter().map(|&v| inst.demands[v]).sum();
            if load + inst.demands[c] > inst.capacity {
                continue;
            }
        }
        for p in 0..=r.len() {
            let prev = if p == 0 { 0 } else { r[p - 1] };
            let next = if p == r.len() { 0 } else { r[p] };
            let delta = inst.dist(prev, c) + inst.dist(c, next) - inst.dist(prev, next);
            if best.map_or(true, |(d, _, _)| delta < d) {
                best = Some((delta, ri, p));
            }
        }
    }
    if cvrp {
        let delta = 2.0 * inst.dist(0, c);
        if best.map_or(true, |(d, _, _)| delta < d) {
            routes.push(vec![c]);
            return;
        }
    }
    let (_, ri, p) = best.expect("a TSP tour always admits an insertion");
    routes[ri].insert(p, c);
}

const IMPROVEMENT_EPS: f64 = 1e-12;

/// First-improvement 2-opt over every route until no exchange shortens it.
/// For CVRP each route is a depot-to-depot path and moves stay inside it.
pub fn two_opt(traj: &Trajectory, inst: &Instance) -> Trajectory {
    let nodes = match inst.kind {
        ProblemKind::Tsp => {
            let mut t = traj.nodes.clone();
            two_opt_cycle(&mut t, inst);
            t
        }
        ProblemKind::Cvrp => {
            let mut routes = traj.routes();
            for r in &mut routes {
                let mut path = Vec::with_capacity(r.len() + 2);
                path.push(0);
                path.extend_from_slice(r);
                path.push(0);
                two_opt_path(&mut path, inst);
                *r = path[1..path.len() - 1].to_vec();
            }
            to_nodes(&routes, inst.kind)
        }
    };
    let mut out = Trajectory::from_nodes(inst, nodes);
    out.instance_id = traj.instance_id.clone();
    out
}

/// 2-opt on a closed tour; position 0 never moves.
pub fn two_opt_cycle(t: &mut [usize], inst: &Instance) {
    let n = t.len();
    if n < 4 {
        return;
    }
    'search: loop {
        for i in 0..n - 2 {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b, c, d) = (t[i], t[i + 1], t[j], t[(j + 1) % n]);
                let delta = inst.dist(a, c) + inst.dist(b, d) - inst.dist(a, b) - inst.dist(c, d);
                if delta < -IMPROVEMENT_EPS {
                    t[i + 1..=j].reverse();
                    continue 'search;
                }
            }
        }
        break;
    }
}

/// 2-opt on an open path with fixed endpoints.
pub fn two_opt_path(p: &mut [usize], inst: &Instance) {
    let n = p.len();
    if n < 4 {
        return;
    }
    'search: loop {
        for i in 0..n - 3 {
            for j in i + 2..n - 1 {
                let (a, b, c, d) = (p[i], p[i + 1], p[j], p[j + 1]);
                let delta = inst.dist(a, c) + inst.dist(b, d) - inst.dist(a, b) - inst.dist(c, d);
                if delta < -IMPROVEMENT_EPS {
                    p[i + 1..=j].reverse();
                    continue 'search;
                }
            }
        }
        break;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate, GenConfig};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn square() -> Instance {
        Instance::tsp("sq", vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap()
    }

    #[test]
    fn optimal_square_unchanged() {
        let inst = square();
        let t = Trajectory::from_nodes(&inst, vec![0, 1, 2, 3]);
        for variant in [LsVariant::DestroyRepair, LsVariant::TwoOpt] {
            let cfg = LocalSearchConfig { variant, ..Default::default() };
            assert_eq!(improve(&t, &inst, &cfg).unwrap().length, 4.0);
        }
    }

    #[test]
    fn two_opt_uncrosses_square() {
        let inst = square();
        let t = Trajectory::from_nodes(&inst, vec![0, 2, 1, 3]);
        assert!((t.length - (2.0 + 2.0 * 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(two_opt(&t, &inst).length, 4.0);
    }

    #[test]
    fn destroy_repair_improves_random_tours() {
        let cfg = LocalSearchConfig::default();
        let mut total = 0.0;
        for seed in 0..100 {
            let inst = generate(&GenConfig::standard(20, seed), ProblemKind::Tsp).unwrap();
            let mut rng = substream(seed, Stream::Data, 1, 0);
            let mut rest: Vec<usize> = (1..20).collect();
            rest.shuffle(&mut rng);
            let mut nodes = vec![0];
            nodes.extend(rest);
            let t = Trajectory::from_nodes(&inst, nodes);
            let out = improve(&t, &inst, &LocalSearchConfig { seed, ..cfg }).unwrap();
            total += t.length - out.length;
        }
        assert!(total / 100.0 > 0.0);
    }

    #[test]
    fn cvrp_insertion_respects_capacity() {
        let inst = Instance::cvrp(
            "c",
            vec![(0.0, 0.0), (1.0, 0.0), (1.1, 0.0), (0.0, 1.0)],
            vec![0, 3, 3, 2],
            5,
        )
        .unwrap();
        let t = Trajectory::from_nodes(&inst, vec![0, 1, 0, 2, 0, 3, 0]);
        let out = improve(&t, &inst, &LocalSearchConfig::default()).unwrap();
        validate_trajectory(&out, &inst).unwrap();
        assert!(out.length <= t.length);
    }

    #[test]
    fn two_opt_fixed_points_exhaustive() {
        for seed in 0..20 {
            let n = 5 + (seed as usize % 8);
            let inst = generate(&GenConfig::standard(n, seed), ProblemKind::Tsp).unwrap();
            let mut rng = substream(seed, Stream::Data, 2, 0);
            let mut rest: Vec<usize> = (1..n).collect();
            rest.shuffle(&mut rng);
            let mut nodes = vec![0];
            nodes.extend(rest);
            let out = two_opt(&Trajectory::from_nodes(&inst, nodes), &inst);
            let t = &out.nodes;
            // every reversal of a contiguous block is no shorter
            for i in 1..n {
                for j in i + 1..n {
                    let mut c = t.clone();
                    c[i..=j].reverse();
                    assert!(inst.closed_length(&c) >= out.length - 1e-9);
                }
            }
        }
    }

    fn random_solution(kind: ProblemKind, n: usize, seed: u64) -> (Instance, Trajectory) {
        let inst = generate(&GenConfig::standard(n, seed), kind).unwrap();
        let mut rng = substream(seed, Stream::Data, 3, 0);
        let mut cust: Vec<usize> = (1..inst.n_nodes()).collect();
        cust.shuffle(&mut rng);
        let nodes = match kind {
            ProblemKind::Tsp => std::iter::once(0).chain(cust).collect(),
            ProblemKind::Cvrp => {
                let mut nodes = vec![0];
                let mut load = 0;
                for c in cust {
                    if load + inst.demands[c] > inst.capacity {
                        nodes.push(0);
                        load = 0;
                    }
                    load += inst.demands[c];
                    nodes.push(c);
                }
                nodes.push(0);
                nodes
            }
        };
        let t = Trajectory::from_nodes(&inst, nodes);
        (inst, t)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn never_worse_and_feasible(seed in 0u64..10_000, n in 3usize..25, cvrp in any::<bool>(), two in any::<bool>()) {
            let kind = if cvrp { ProblemKind::Cvrp } else { ProblemKind::Tsp };
            let (inst, t) = random_solution(kind, n, seed);
            let variant = if two { LsVariant::TwoOpt } else { LsVariant::DestroyRepair };
            let out = improve(&t, &inst, &LocalSearchConfig { variant, seed, ..Default::default() }).unwrap();
            validate_trajectory(&out, &inst).unwrap();
            prop_assert!(out.length <= t.length + 1e-9);
        }
    }
}
