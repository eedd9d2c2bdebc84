//! k-nearest-neighbour sparsification and raw network input features.

use std::sync::Arc;

use crate::error::{AgfnError, Result};
use crate::gnn::GraphInput;
use crate::instance::{Instance, ProblemKind};

/// Directed k-NN graph over an instance, with edges grouped by source node.
#[derive(Debug, Clone)]
pub struct SparseGraph {
    pub instance: Arc<Instance>,
    pub k: usize,
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub edge_dist: Vec<f64>,
    /// `neighbor_index[i]..neighbor_index[i + 1]` are the out-edges of node `i`.
    pub neighbor_index: Vec<usize>,
    pub node_feat_width: usize,
    pub node_feat_raw: Vec<f64>,
    pub edge_feat_width: usize,
    pub edge_feat_raw: Vec<f64>,
}

/// `max(ceil(|V| / 4), 2)`, clamped to `|V| - 1`.
pub fn default_k(n_nodes: usize) -> usize {
    n_nodes.div_ceil(4).max(2).min(n_nodes.saturating_sub(1)).max(1)
}

/// Keeps the `k` nearest other nodes of every node (ties to the lower index).
/// For CVRP the edges to and from the depot are always kept as well.
pub fn sparsify(inst: &Arc<Instance>, k: usize) -> Result<SparseGraph> {
    let n = inst.n_nodes();
    if k == 0 || k > n - 1 {
        return Err(AgfnError::Config(format!(
            "sparsification k = {k} outside 1..={}",
            n - 1
        )));
    }
    let force_depot = inst.kind == ProblemKind::Cvrp;
    let mut edges = Vec::with_capacity(n * (k + 1));
    let mut edge_dist = Vec::with_capacity(n * (k + 1));
    let mut neighbor_index = Vec::with_capacity(n + 1);
    neighbor_index.push(0);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (inst.dist(i, j), j)));
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut keep: Vec<(f64, usize)> = cand[..k].to_vec();
        if force_depot {
            if i == 0 {
                keep = cand.clone();
            } else if !keep.iter().any(|&(_, j)| j == 0) {
                keep.push((inst.dist(i, 0), 0));
            }
        }
        keep.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (d, j) in keep {
            edges.push((i, j));
            edge_dist.push(d);
        }
        neighbor_index.push(edges.len());
    }
    let src = edges.iter().map(|e| e.0).collect();
    let dst = edges.iter().map(|e| e.1).collect();
    Ok(SparseGraph {
        instance: Arc::clone(inst),
        k,
        n_nodes: n,
        edges,
        src,
        dst,
        edge_dist,
        neighbor_index,
        node_feat_width: 0,
        node_feat_raw: Vec::new(),
        edge_feat_width: 0,
        edge_feat_raw: Vec::new(),
    })
}

/// TSP nodes: `(x, y)`. CVRP nodes: `(x, y, demand / C, is_depot)`.
/// Edges: `(distance,)`.
pub fn build_features(mut g: SparseGraph) -> SparseGraph {
    let inst = Arc::clone(&g.instance);
    match inst.kind {
        ProblemKind::Tsp => {
            g.node_feat_width = 2;
            g.node_feat_raw = inst.coords.iter().flat_map(|&(x, y)| [x, y]).collect();
        }
        ProblemKind::Cvrp => {
            g.node_feat_width = 4;
            let cap = inst.capacity as f64;
            g.node_feat_raw = inst
                .coords
                .iter()
                .enumerate()
                .flat_map(|(i, &(x, y))| {
                    [x, y, inst.demands[i] as f64 / cap, if i == 0 { 1.0 } else { 0.0 }]
                })
                .collect();
        }
    }
    g.edge_feat_width = 1;
    g.edge_feat_raw = g.edge_dist.clone();
    g
}

impl SparseGraph {
    pub fn gnn_input(&self) -> GraphInput<'_> {
        GraphInput {
            n_nodes: self.n_nodes,
            node_feat: &self.node_feat_raw,
            node_width: self.node_feat_width,
            edge_feat: &self.edge_feat_raw,
            edge_width: self.edge_feat_width,
            src: &self.src,
            dst: &self.dst,
            offsets: &self.neighbor_index,
        }
    }

    /// Sparsify with the default `k` and populate features.
    pub fn build(inst: Instance) -> Result<Self> {
        let k = default_k(inst.n_nodes());
        Self::build_with_k(inst, k)
    }

    pub fn build_with_k(inst: Instance, k: usize) -> Result<Self> {
        let inst = Arc::new(inst);
        Ok(build_features(sparsify(&inst, k)?))
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn out_edges(&self, i: usize) -> std::ops::Range<usize> {
        self.neighbor_index[i]..self.neighbor_index[i + 1]
    }

    pub fn find_edge(&self, src: usize, dst: usize) -> Option<usize> {
        self.out_edges(src).find(|&e| self.dst[e] == dst)
    }

    /// Node feature width for a problem kind (without any extra channels).
    pub fn node_width_for(kind: ProblemKind) -> usize {
        match kind {
            ProblemKind::Tsp => 2,
            ProblemKind::Cvrp => 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate, GenConfig};

    fn square() -> Arc<Instance> {
        Arc::new(
            Instance::tsp("sq", vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap(),
        )
    }

    #[test]
    fn square_keeps_adjacent_corners() {
        let g = sparsify(&square(), 2).unwrap();
        for i in 0..4 {
            let r = g.out_edges(i);
            assert_eq!(r.len(), 2);
            for e in r {
                assert_eq!(g.edge_dist[e], 1.0);
                assert_ne!(g.dst[e], (i + 2) % 4);
            }
        }
    }

    #[test]
    fn default_k_rule() {
        assert_eq!(default_k(8), 2);
        assert_eq!(default_k(20), 5);
        assert_eq!(default_k(21), 6);
        assert_eq!(default_k(3), 2);
        assert_eq!(default_k(2), 1);
    }

    #[test]
    fn saturated_k_is_complete() {
        let inst = Arc::new(generate(&GenConfig::standard(7, 2), ProblemKind::Tsp).unwrap());
        let g = sparsify(&inst, 6).unwrap();
        assert_eq!(g.n_edges(), 42);
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(g.find_edge(i, j).is_some(), i != j);
            }
        }
    }

    #[test]
    fn k_out_of_range() {
        assert!(matches!(sparsify(&square(), 0), Err(AgfnError::Config(_))));
        assert!(matches!(sparsify(&square(), 4), Err(AgfnError::Config(_))));
    }

    #[test]
    fn cvrp_depot_edges_forced() {
        let inst = Arc::new(generate(&GenConfig::standard(30, 9), ProblemKind::Cvrp).unwrap());
        let g = sparsify(&inst, 3).unwrap();
        for i in 1..31 {
            assert!(g.find_edge(i, 0).is_some());
            assert!(g.find_edge(0, i).is_some());
            let deg = g.out_edges(i).len();
            assert!(deg == 3 || deg == 4);
        }
    }

    #[test]
    fn invariants_hold() {
        let inst = Arc::new(generate(&GenConfig::standard(25, 4), ProblemKind::Tsp).unwrap());
        let g = sparsify(&inst, 5).unwrap();
        assert_eq!(g.neighbor_index[0], 0);
        assert_eq!(*g.neighbor_index.last().unwrap(), g.n_edges());
        for (e, &(s, d)) in g.edges.iter().enumerate() {
            assert_ne!(s, d);
            assert!(g.out_edges(s).contains(&e));
            assert_eq!(g.edge_dist[e], inst.dist(s, d));
        }
        // the kept set is exactly the 5 nearest
        for i in 0..25 {
            let worst_kept = g.out_edges(i).map(|e| g.edge_dist[e]).fold(0.0, f64::max);
            let closer_missing = (0..25)
                .filter(|&j| j != i && g.find_edge(i, j).is_none())
                .any(|j| inst.dist(i, j) < worst_kept);
            assert!(!closer_missing);
        }
    }

    #[test]
    fn depot_rule_is_cvrp_only() {
        let inst = generate(&GenConfig::standard(16, 1), ProblemKind::Tsp).unwrap();
        let g = sparsify(&Arc::new(inst), 4).unwrap();
        assert!((0..16).all(|i| g.out_edges(i).len() == 4));
    }

    #[test]
    fn feature_values() {
        let inst = Instance::cvrp(
            "f",
            vec![(0.5, 0.5), (0.0, 0.0), (0.0, 1.0)],
            vec![0, 5, 10],
            50,
        )
        .unwrap();
        let g = SparseGraph::build_with_k(inst, 2).unwrap();
        assert_eq!(&g.node_feat_raw[0..4], &[0.5, 0.5, 0.0, 1.0]);
        assert_eq!(&g.node_feat_raw[4..8], &[0.0, 0.0, 0.1, 0.0]);
        let e = g.find_edge(1, 2).unwrap();
        assert_eq!(g.edge_feat_raw[e], 1.0);

        let tsp = Instance::tsp("t", vec![(0.2, 0.9), (0.0, 0.0)]).unwrap();
        let g = SparseGraph::build(tsp).unwrap();
        assert_eq!(&g.node_feat_raw[0..2], &[0.2, 0.9]);
    }
}
