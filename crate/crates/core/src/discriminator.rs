//! Solution discriminator: scores a complete route in (0, 1).
//!
//! A solution is presented as its instance graph with two extra inputs: each
//! node carries its normalized position in the route and each edge a flag
//! for whether the route uses it (in either direction). Route edges missing
//! from the sparse graph are added so that every used edge is seen. The
//! score is a sigmoid MLP over the mean embedding of the used edges
//! concatenated with the mean node embedding.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParameterStore, Tape, Tensor, Var};
use crate::decoder::{validate_trajectory, Trajectory};
use crate::error::{AgfnError, Result};
use crate::gnn::{BnUpdate, GnnEncoder, GraphBatch, GraphInput, Mlp, Mode};
use crate::instance::ProblemKind;
use crate::rng::{substream, Stream};
use crate::sparse_graph::SparseGraph;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub head_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            hidden_dim: 16,
            n_layers: 2,
            head_hidden: vec![16],
            seed: 1,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.n_layers == 0 || self.head_hidden.contains(&0) {
            return Err(AgfnError::Config("discriminator widths and depth must be positive".into()));
        }
        Ok(())
    }
}

/// A route rendered as discriminator input.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionGraph {
    pub n_nodes: usize,
    pub node_feat: Vec<f64>,
    pub node_width: usize,
    /// `(dist, used)` per edge.
    pub edge_feat: Vec<f64>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub offsets: Vec<usize>,
    pub used_edges: Vec<usize>,
}

impl SolutionGraph {
    pub fn encode(traj: &Trajectory, g: &SparseGraph) -> Result<Self> {
        let inst = &*g.instance;
        validate_trajectory(traj, inst)?;
        let n = g.n_nodes;

        let mut route_pairs: Vec<(usize, usize)> = traj
            .nodes
            .windows(2)
            .filter(|w| w[0] != w[1])
            .map(|w| (w[0], w[1]))
            .collect();
        if inst.kind == ProblemKind::Tsp && n > 1 {
            route_pairs.push((*traj.nodes.last().unwrap(), traj.nodes[0]));
        }
        let mut used = std::collections::HashSet::new();
        for &(a, b) in &route_pairs {
            used.insert((a, b));
            used.insert((b, a));
        }

        let mut src = Vec::new();
        let mut dst = Vec::new();
        let mut edge_feat = Vec::new();
        let mut offsets = vec![0];
        let mut used_edges = Vec::new();
        for i in 0..n {
            let mut targets: Vec<usize> = g.out_edges(i).map(|e| g.dst[e]).collect();
            let mut extra: Vec<usize> = used
                .iter()
                .filter(|&&(a, b)| a == i && !targets.contains(&b))
                .map(|&(_, b)| b)
                .collect();
            extra.sort_by(|&a, &b| inst.dist(i, a).total_cmp(&inst.dist(i, b)).then(a.cmp(&b)));
            targets.extend(extra);
            for j in targets {
                let u = used.contains(&(i, j));
                if u {
                    used_edges.push(src.len());
                }
                src.push(i);
                dst.push(j);
                edge_feat.push(inst.dist(i, j));
                edge_feat.push(if u { 1.0 } else { 0.0 });
            }
            offsets.push(src.len());
        }

        let steps = (traj.nodes.len() - 1).max(1) as f64;
        let mut position = vec![f64::NAN; n];
        for (t, &v) in traj.nodes.iter().enumerate() {
            if position[v].is_nan() {
                position[v] = t as f64 / steps;
            }
        }
        let w = g.node_feat_width;
        let mut node_feat = Vec::with_capacity(n * (w + 1));
        for i in 0..n {
            node_feat.extend_from_slice(&g.node_feat_raw[i * w..(i + 1) * w]);
            node_feat.push(position[i]);
        }
        Ok(SolutionGraph {
            n_nodes: n,
            node_feat,
            node_width: w + 1,
            edge_feat,
            src,
            dst,
            offsets,
            used_edges,
        })
    }

    pub fn input(&self) -> GraphInput<'_> {
        GraphInput {
            n_nodes: self.n_nodes,
            node_feat: &self.node_feat,
            node_width: self.node_width,
            edge_feat: &self.edge_feat,
            edge_width: 2,
            src: &self.src,
            dst: &self.dst,
            offsets: &self.offsets,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscriminatorNet {
    pub cfg: DiscriminatorConfig,
    pub encoder: GnnEncoder,
    pub head: Mlp,
}

impl DiscriminatorNet {
    /// `base_node_width` is the instance node-feature width (2 for TSP, 4 for
    /// CVRP); the route position is appended.
    pub fn new(cfg: DiscriminatorConfig, base_node_width: usize) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden_dim;
        Ok(DiscriminatorNet {
            encoder: GnnEncoder {
                node_in: base_node_width + 1,
                edge_in: 2,
                hidden: d,
                layers: cfg.n_layers,
            },
            head: Mlp::new("head", 2 * d, &cfg.head_hidden, 1),
            cfg,
        })
    }

    pub fn init(&self) -> Result<ParameterStore> {
        let mut rng = substream(self.cfg.seed, Stream::Init, 1, 0);
        let mut store = ParameterStore::new();
        self.encoder.register(&mut store, &mut rng)?;
        self.head.register(&mut store, &mut rng)?;
        Ok(store)
    }

    /// `[G, 1]` scores for a batch of solutions.
    pub fn score_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        store: &ParameterStore,
        solutions: &[&SolutionGraph],
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<Var> {
        if solutions.is_empty() {
            return Err(AgfnError::Usage("scoring an empty batch".into()));
        }
        let mut batch = GraphBatch::new(self.encoder.node_in, 2);
        let mut used = Vec::new();
        let mut used_offsets = vec![0];
        for s in solutions {
            let e0 = batch.n_edges();
            batch.push(&s.input())?;
            used.extend(s.used_edges.iter().map(|&e| e + e0));
            used_offsets.push(used.len());
        }
        let enc = self.encoder.encode(tape, bound, store, &batch.input(), mode, updates)?;
        let e_used = tape.gather(enc.e, &used)?;
        let e_pool = tape.mean_aggregate(e_used, &used_offsets)?;
        let h_pool = tape.mean_aggregate(enc.h, &batch.node_offsets)?;
        let x = tape.concat(&[e_pool, h_pool])?;
        let logit = self.head.forward(tape, bound, x)?;
        Ok(tape.sigmoid(logit))
    }

    /// Inference-mode scores; the store is not modified.
    pub fn score_many(&self, store: &ParameterStore, solutions: &[&SolutionGraph]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let s = self.score_on_tape(&mut tape, &bound, store, solutions, Mode::Infer, &mut Vec::new())?;
        Ok(tape.value(s).data.clone())
    }

    pub fn score(&self, store: &ParameterStore, traj: &Trajectory, g: &SparseGraph) -> Result<f64> {
        let sol = SolutionGraph::encode(traj, g)?;
        Ok(self.score_many(store, &[&sol])?[0])
    }
}

/// `(1/(M+N)) (sum_true (1 - S)^2 + sum_false S^2)`; `labels[i]` is true for
/// the locally improved ("true") solutions.
pub fn disc_loss(tape: &mut Tape, scores: Var, labels: &[bool]) -> Result<Var> {
    if labels.is_empty() {
        return Err(AgfnError::Usage("discriminator loss needs at least one solution".into()));
    }
    if tape.value(scores).numel() != labels.len() {
        return Err(AgfnError::shape(
            "disc_loss",
            format!("{} scores for {} labels", tape.value(scores).numel(), labels.len()),
        ));
    }
    let targets: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let r = tape.value(scores).rows();
    let targets = tape.constant(Tensor::matrix(r, 1, targets)?);
    let diff = tape.sub(scores, targets)?;
    let sq = tape.square(diff);
    tape.mean_reduce(sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{central_difference, rel_error};
    use crate::instance::{generate, GenConfig, Instance};

    fn loss_value(scores: &[f64], labels: &[bool]) -> f64 {
        let mut t = Tape::new();
        let s = t.param(Tensor::matrix(scores.len(), 1, scores.to_vec()).unwrap());
        let l = disc_loss(&mut t, s, labels).unwrap();
        t.scalar(l)
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_value(&[1.0, 1.0, 0.0], &[true, true, false]), 0.0);
        assert_eq!(loss_value(&[0.5, 0.5], &[true, false]), 0.25);
        assert!((loss_value(&[0.8], &[false]) - 0.64).abs() < 1e-15);
        let mut t = Tape::new();
        let s = t.param(Tensor::matrix(0, 1, vec![]).unwrap());
        assert!(disc_loss(&mut t, s, &[]).is_err());
    }

    #[test]
    fn encoding_marks_route_edges() {
        let inst = Instance::tsp(
            "sq",
            vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.5, 3.0)],
        )
        .unwrap();
        let g = SparseGraph::build_with_k(inst.clone(), 1).unwrap();
        let t = Trajectory::from_nodes(&inst, vec![0, 2, 4, 3, 1]);
        let s = SolutionGraph::encode(&t, &g).unwrap();
        // five undirected route edges, each present in both directions
        assert_eq!(s.used_edges.len(), 10);
        for &e in &s.used_edges {
            assert_eq!(s.edge_feat[2 * e + 1], 1.0);
        }
        assert_eq!(s.node_feat[s.node_width * 4 + 2], 0.5);
        let bad = Trajectory::from_nodes(&inst, vec![0, 2, 2, 3, 1]);
        assert!(matches!(SolutionGraph::encode(&bad, &g), Err(AgfnError::Invariant(_))));
    }

    #[test]
    fn scores_are_probabilities_and_repeatable() {
        for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
            let inst = generate(&GenConfig::standard(20, 5), kind).unwrap();
            let g = SparseGraph::build(inst.clone()).unwrap();
            let net = DiscriminatorNet::new(DiscriminatorConfig::default(), g.node_feat_width).unwrap();
            let store = net.init().unwrap();
            let nodes = match kind {
                ProblemKind::Tsp => (0..20).collect(),
                ProblemKind::Cvrp => {
                    let mut v = vec![0];
                    for c in 1..21 {
                        v.push(c);
                        v.push(0);
                    }
                    v
                }
            };
            let t = Trajectory::from_nodes(&inst, nodes);
            let a = net.score(&store, &t, &g).unwrap();
            assert!(a > 0.0 && a < 1.0);
            assert_eq!(a, net.score(&store, &t, &g).unwrap());
        }
    }

    fn probe(net: &DiscriminatorNet, store: &ParameterStore, sols: &[&SolutionGraph], labels: &[bool]) -> (f64, Vec<(String, Vec<f64>)>) {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let s = net
            .score_on_tape(&mut tape, &bound, store, sols, Mode::Train, &mut Vec::new())
            .unwrap();
        let l = disc_loss(&mut tape, s, labels).unwrap();
        let g = tape.backward(l).unwrap();
        let gs = store
            .names()
            .map(|n| (n.to_string(), g.get(bound.get(n).unwrap()).to_vec()))
            .collect();
        (tape.scalar(l), gs)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let inst = generate(&GenConfig::standard(6, 2), ProblemKind::Tsp).unwrap();
        let g = SparseGraph::build(inst.clone()).unwrap();
        let cfg = DiscriminatorConfig {
            hidden_dim: 4,
            n_layers: 1,
            head_hidden: vec![4],
            seed: 7,
        };
        let net = DiscriminatorNet::new(cfg, 2).unwrap();
        let store = net.init().unwrap();
        let a = SolutionGraph::encode(&Trajectory::from_nodes(&inst, vec![0, 1, 2, 3, 4, 5]), &g).unwrap();
        let b = SolutionGraph::encode(&Trajectory::from_nodes(&inst, vec![0, 3, 1, 5, 2, 4]), &g).unwrap();
        let sols = [&a, &b];
        let labels = [true, false];
        let (_, grads) = probe(&net, &store, &sols, &labels);
        for (name, an) in &grads {
            let mut data = store.get(name).unwrap().data.clone();
            for i in 0..data.len().min(3) {
                let num = central_difference(&mut data, i, 1e-5, |d| {
                    let mut s = store.clone();
                    s.get_mut(name).unwrap().data = d.to_vec();
                    probe(&net, &s, &sols, &labels).0
                });
                assert!(rel_error(an[i], num, 1e-6) < 1e-4, "{name}[{i}]: {} vs {num}", an[i]);
            }
        }
    }
}
