//! Shaped reward, trajectory log-probabilities and the trajectory-balance
//! objective. Everything stays in log space: the shaped reward can be far
//! above or below 1 and is never exponentiated.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::decoder::{replay, ReplayStep, Trajectory};
use crate::error::{AgfnError, Result};
use crate::instance::{Instance, ProblemKind};
use crate::policy_net::Heatmap;
use crate::sparse_graph::SparseGraph;

/// Lengths, discriminator scores and the shaped value
/// `-log R~ = (1 - S) + R - mean(R)` for K trajectories of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBatch {
    pub lengths: Vec<f64>,
    pub scores: Vec<f64>,
    pub neg_log_reward: Vec<f64>,
}

impl RewardBatch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn log_reward(&self) -> Vec<f64> {
        self.neg_log_reward.iter().map(|v| -v).collect()
    }
}

pub fn shaped_reward(lengths: &[f64], scores: &[f64]) -> Result<RewardBatch> {
    if lengths.is_empty() {
        return Err(AgfnError::Domain("shaped reward needs at least one trajectory".into()));
    }
    if lengths.len() != scores.len() {
        return Err(AgfnError::shape(
            "shaped_reward",
            format!("{} lengths but {} scores", lengths.len(), scores.len()),
        ));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(AgfnError::Domain(format!("discriminator score {bad} outside [0, 1]")));
    }
    let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
    let neg_log_reward = lengths
        .iter()
        .zip(scores)
        .map(|(r, s)| (1.0 - s) + (r - mean))
        .collect();
    Ok(RewardBatch {
        lengths: lengths.to_vec(),
        scores: scores.to_vec(),
        neg_log_reward,
    })
}

/// `log R(x) = -length / t_reward` for the plain objective.
pub fn plain_log_reward(length: f64, t_reward: f64) -> f64 {
    -length / t_reward
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PbMode {
    /// Every partial route has a single parent, so `P_B = 1`.
    #[default]
    Unique,
    /// Counts the `2n` rotations and reflections of a TSP tour as equivalent.
    Symmetric,
}

/// `log P_B(tau)`. The symmetric mode only affects TSP.
pub fn backward_logprob(inst: &Instance, mode: PbMode) -> f64 {
    match (mode, inst.kind) {
        (PbMode::Symmetric, ProblemKind::Tsp) => -((2 * inst.n_nodes()) as f64).ln(),
        _ => 0.0,
    }
}

/// Action sets of a batch of trajectories on one graph, flattened for a
/// single vectorized pass over the tape.
#[derive(Debug, Clone, Default)]
pub struct ReplayBatch {
    /// Candidate edges of every sparse step, concatenated.
    pub candidates: Vec<usize>,
    /// `candidates[step_offsets[s]..step_offsets[s + 1]]` belong to step `s`.
    pub step_offsets: Vec<usize>,
    pub chosen: Vec<usize>,
    /// Sparse steps of trajectory `k` are `traj_offsets[k]..traj_offsets[k + 1]`.
    pub traj_offsets: Vec<usize>,
    /// Summed log-probability of each trajectory's fallback steps.
    pub fixed_logp: Vec<f64>,
    pub temperature: f64,
}

impl ReplayBatch {
    pub fn build(trajs: &[Trajectory], g: &SparseGraph, temperature: f64) -> Result<Self> {
        let mut b = ReplayBatch {
            step_offsets: vec![0],
            traj_offsets: vec![0],
            temperature,
            ..Default::default()
        };
        for t in trajs {
            let mut fixed = 0.0;
            for step in replay(t, g, temperature)? {
                match step {
                    ReplayStep::Sparse { edges, chosen } => {
                        b.chosen.push(edges[chosen]);
                        b.candidates.extend_from_slice(&edges);
                        b.step_offsets.push(b.candidates.len());
                    }
                    ReplayStep::Fixed { log_prob } => fixed += log_prob,
                }
            }
            b.traj_offsets.push(b.chosen.len());
            b.fixed_logp.push(fixed);
        }
        Ok(b)
    }

    pub fn n_trajectories(&self) -> usize {
        self.fixed_logp.len()
    }
}

/// `sum_t log P_F(s_t | s_{t-1})` for every trajectory in `batch`, as a
/// `[K]` tape value differentiable through `log_heat`. `edge_offset` locates
/// the graph's rows inside a batched `log_heat`.
pub fn forward_logprob_on_tape(
    tape: &mut Tape,
    log_heat: Var,
    edge_offset: usize,
    batch: &ReplayBatch,
) -> Result<Var> {
    let k = batch.n_trajectories();
    let fixed = tape.constant(Tensor::column(batch.fixed_logp.clone()));
    if batch.chosen.is_empty() {
        return Ok(fixed);
    }
    let inv_t = 1.0 / batch.temperature;
    let shift = |idx: &[usize]| idx.iter().map(|&e| e + edge_offset).collect::<Vec<_>>();
    let cand = tape.gather(log_heat, &shift(&batch.candidates))?;
    let cand = tape.mul_scalar(cand, inv_t);
    let lse = tape.segment_logsumexp(cand, &batch.step_offsets)?;
    let chosen = tape.gather(log_heat, &shift(&batch.chosen))?;
    let chosen = tape.mul_scalar(chosen, inv_t);
    let step_logp = tape.sub(chosen, lse)?;
    // segment mean times segment size is the per-trajectory sum
    let mean = tape.mean_aggregate(step_logp, &batch.traj_offsets)?;
    let counts: Vec<f64> = batch.traj_offsets.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    let counts = tape.constant(Tensor::matrix(k, 1, counts)?);
    let sums = tape.hadamard(mean, counts)?;
    tape.add(sums, fixed)
}

/// `log P_F(tau)` recomputed from a heatmap (no gradient).
pub fn forward_logprob(traj: &Trajectory, g: &SparseGraph, heat: &Heatmap, temperature: f64) -> Result<f64> {
    let inv_t = 1.0 / temperature;
    let mut total = 0.0;
    for step in replay(traj, g, temperature)? {
        total += match step {
            ReplayStep::Sparse { edges, chosen } => {
                let a: Vec<f64> = edges.iter().map(|&e| heat.log_scores[e] * inv_t).collect();
                let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                a[chosen] - lse
            }
            ReplayStep::Fixed { log_prob } => log_prob,
        };
    }
    Ok(total)
}

/// `(1/K) sum_k (log Z + log P_F(tau_k) - log R(tau_k) - log P_B(tau_k))^2`.
/// `log_z` is a scalar (or a one-element tensor), `log_pf` a `[K]` tape value.
pub fn tb_loss(tape: &mut Tape, log_z: Var, log_pf: Var, log_reward: &[f64], log_pb: &[f64]) -> Result<Var> {
    let k = log_reward.len();
    if k == 0 || log_pb.len() != k || tape.value(log_pf).numel() != k {
        return Err(AgfnError::shape(
            "tb_loss",
            format!(
                "{} log P_F values, {k} rewards, {} log P_B values",
                tape.value(log_pf).numel(),
                log_pb.len()
            ),
        ));
    }
    let z = tape.gather(log_z, &vec![0; k])?;
    let resid = tape.add(log_pf, z)?;
    let offset: Vec<f64> = log_reward.iter().zip(log_pb).map(|(r, b)| -r - b).collect();
    let offset = tape.constant(Tensor::column(offset));
    let resid = tape.add(resid, offset)?;
    let sq = tape.square(resid);
    tape.mean_reduce(sq)
}

/// Trajectory balance with the unshaped reward `exp(-length / t_reward)`.
pub fn tb_loss_plain(
    tape: &mut Tape,
    log_z: Var,
    log_pf: Var,
    lengths: &[f64],
    t_reward: f64,
    log_pb: &[f64],
) -> Result<Var> {
    if !(t_reward > 0.0) {
        return Err(AgfnError::Config("t_reward must be positive".into()));
    }
    let log_reward: Vec<f64> = lengths.iter().map(|&l| plain_log_reward(l, t_reward)).collect();
    tb_loss(tape, log_z, log_pf, &log_reward, log_pb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::{central_difference, rel_error};
    use crate::decoder::{decode_batch, DecodeConfig};
    use crate::gnn::Mode;
    use crate::instance::{generate, GenConfig};
    use crate::policy_net::{PolicyNet, PolicyNetConfig};

    fn loss_of(log_z: f64, log_pf: &[f64], log_r: &[f64], log_pb: &[f64]) -> f64 {
        let mut t = Tape::new();
        let z = t.param(Tensor::scalar(log_z));
        let pf = t.param(Tensor::column(log_pf.to_vec()));
        let l = tb_loss(&mut t, z, pf, log_r, log_pb).unwrap();
        t.scalar(l)
    }

    #[test]
    fn shaped_reward_examples() {
        let r = shaped_reward(&[7.3], &[1.0]).unwrap();
        assert_eq!(r.neg_log_reward, vec![0.0]);
        let r = shaped_reward(&[10.0, 12.0], &[0.5, 0.5]).unwrap();
        assert_eq!(r.neg_log_reward[0], -0.5);
        assert!(((-r.neg_log_reward[0]).exp() - 1.64872).abs() < 1e-5);
        let r = shaped_reward(&[3.0, 5.0, 4.0], &[0.2, 0.9, 0.0]).unwrap();
        assert_eq!(r.neg_log_reward[2], 1.0);
        assert!(((-r.neg_log_reward[2]).exp() - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn shaped_reward_rejects_bad_scores() {
        assert!(matches!(shaped_reward(&[1.0], &[1.5]), Err(AgfnError::Domain(_))));
        assert!(matches!(shaped_reward(&[1.0], &[-0.1]), Err(AgfnError::Domain(_))));
        assert!(shaped_reward(&[], &[]).is_err());
    }

    #[test]
    fn extreme_lengths_stay_finite() {
        let r = shaped_reward(&[0.0, 1e6], &[0.0, 1.0]).unwrap();
        let l = loss_of(0.0, &[-1.0, -2.0], &r.log_reward(), &[0.0, 0.0]);
        assert!(l.is_finite());
    }

    #[test]
    fn backward_logprob_modes() {
        let tsp = generate(&GenConfig::standard(10, 1), ProblemKind::Tsp).unwrap();
        let cvrp = generate(&GenConfig::standard(10, 1), ProblemKind::Cvrp).unwrap();
        assert_eq!(backward_logprob(&tsp, PbMode::Unique), 0.0);
        assert_eq!(backward_logprob(&tsp, PbMode::Symmetric), -(20f64.ln()));
        assert_eq!(backward_logprob(&cvrp, PbMode::Unique), 0.0);
    }

    #[test]
    fn tb_loss_examples() {
        let l = loss_of(2f64.ln(), &[0.25f64.ln()], &[0.0], &[0.5f64.ln()]);
        assert!(l.abs() < 1e-30);
        assert_eq!(loss_of(0.0, &[0.0], &[1.0], &[0.0]), 1.0);
        // scaling R and Z by the same factor
        let a = loss_of(0.3, &[-1.0, -2.5], &[0.1, -0.4], &[0.0, 0.0]);
        let c = 3f64.ln();
        let b = loss_of(0.3 + c, &[-1.0, -2.5], &[0.1 + c, -0.4 + c], &[0.0, 0.0]);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn tb_loss_plain_examples() {
        let mut t = Tape::new();
        let z = t.param(Tensor::scalar(0.0));
        let pf = t.param(Tensor::column(vec![0.0]));
        let l = tb_loss_plain(&mut t, z, pf, &[2.0], 1.0, &[0.0]).unwrap();
        assert_eq!(t.scalar(l), 4.0);
        let mut t = Tape::new();
        let z = t.param(Tensor::scalar(-2.0));
        let pf = t.param(Tensor::column(vec![0.0, -1.0]));
        let a = tb_loss_plain(&mut t, z, pf, &[2.0, 3.0], 1.0, &[0.0, 0.0]).unwrap();
        let pf2 = t.param(Tensor::column(vec![-1.0, 0.0]));
        let b = tb_loss_plain(&mut t, z, pf2, &[3.0, 2.0], 1.0, &[0.0, 0.0]).unwrap();
        assert_eq!(t.scalar(a), t.scalar(b));
        assert_eq!(t.scalar(a), 0.0);
    }

    #[test]
    fn product_of_step_probabilities() {
        let mut t = Tape::new();
        // three steps whose chosen probabilities are 0.5, 0.4 and 0.25
        let heat = t.param(Tensor::matrix(7, 1, vec![0.5, 0.5, 0.4, 0.6, 0.25, 0.25, 0.5].iter().map(|v: &f64| v.ln()).collect()).unwrap());
        let b = ReplayBatch {
            candidates: vec![0, 1, 2, 3, 4, 5, 6],
            step_offsets: vec![0, 2, 4, 7],
            chosen: vec![0, 2, 4],
            traj_offsets: vec![0, 3],
            fixed_logp: vec![0.0],
            temperature: 1.0,
        };
        let lp = forward_logprob_on_tape(&mut t, heat, 0, &b).unwrap();
        assert!((t.value(lp).data[0] - 0.05f64.ln()).abs() < 1e-12);
        let single = ReplayBatch {
            candidates: vec![3],
            step_offsets: vec![0, 1],
            chosen: vec![3],
            traj_offsets: vec![0, 1],
            fixed_logp: vec![0.0],
            temperature: 1.0,
        };
        let lp = forward_logprob_on_tape(&mut t, heat, 0, &single).unwrap();
        assert_eq!(t.value(lp).data[0], 0.0);
    }

    #[test]
    fn replay_matches_cached_step_logp() {
        for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
            let inst = generate(&GenConfig::standard(20, 11), kind).unwrap();
            let g = SparseGraph::build(inst).unwrap();
            let net = PolicyNet::new(PolicyNetConfig::default(), g.node_feat_width, 1).unwrap();
            let store = net.init().unwrap();
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let out = net.forward_on_tape(&mut tape, &bound, &store, &g, Mode::Infer).unwrap();
            let heat = crate::policy_net::heatmap_from(&tape, out.logits, out.log_heat);
            let r = decode_batch(&g, &heat, &DecodeConfig::training(4)).unwrap();
            let batch = ReplayBatch::build(&r.trajectories, &g, 1.0).unwrap();
            let lp = forward_logprob_on_tape(&mut tape, out.log_heat, 0, &batch).unwrap();
            for (k, t) in r.trajectories.iter().enumerate() {
                let v = tape.value(lp).data[k];
                assert!((v - t.log_pf()).abs() < 1e-12, "{v} vs {}", t.log_pf());
                assert!((forward_logprob(t, &g, &heat, 1.0).unwrap() - t.log_pf()).abs() < 1e-12);
            }
        }
    }

    /// TB loss of K = 3 rollouts on a 6-node instance as a function of the
    /// generator parameters, with the rollouts held fixed.
    fn tb_probe(
        net: &PolicyNet,
        store: &crate::autodiff::ParameterStore,
        g: &SparseGraph,
        batch: &ReplayBatch,
        log_r: &[f64],
        plain: Option<&[f64]>,
    ) -> (f64, Vec<(String, Vec<f64>)>) {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let out = net.forward_on_tape(&mut tape, &bound, store, g, Mode::Train).unwrap();
        let lp = forward_logprob_on_tape(&mut tape, out.log_heat, 0, batch).unwrap();
        let pb = vec![0.0; log_r.len()];
        let loss = match plain {
            Some(len) => tb_loss_plain(&mut tape, out.log_z, lp, len, 1.5, &pb).unwrap(),
            None => tb_loss(&mut tape, out.log_z, lp, log_r, &pb).unwrap(),
        };
        let grads = tape.backward(loss).unwrap();
        let gs = store
            .names()
            .map(|n| (n.to_string(), grads.get(bound.get(n).unwrap()).to_vec()))
            .collect();
        (tape.scalar(loss), gs)
    }

    #[test]
    fn tb_gradients_match_finite_differences() {
        let inst = generate(&GenConfig::standard(6, 3), ProblemKind::Tsp).unwrap();
        let g = SparseGraph::build(inst).unwrap();
        let cfg = PolicyNetConfig {
            hidden_dim: 4,
            n_layers: 2,
            mlp_hidden: vec![4],
            logz_hidden: vec![4],
            ..Default::default()
        };
        let net = PolicyNet::new(cfg, 2, 1).unwrap();
        let store = net.init().unwrap();
        let heat = net.heatmap(&store, &g).unwrap();
        let trajs = decode_batch(&g, &heat, &DecodeConfig { n_rollouts: 3, ..DecodeConfig::training(2) })
            .unwrap()
            .trajectories;
        let batch = ReplayBatch::build(&trajs, &g, 1.0).unwrap();
        let lengths: Vec<f64> = trajs.iter().map(|t| t.length).collect();
        let log_r = shaped_reward(&lengths, &[0.3, 0.6, 0.9]).unwrap().log_reward();
        for plain in [None, Some(lengths.as_slice())] {
            let (_, grads) = tb_probe(&net, &store, &g, &batch, &log_r, plain);
            for (name, an) in &grads {
                let mut data = store.get(name).unwrap().data.clone();
                for i in 0..data.len().min(2) {
                    let num = central_difference(&mut data, i, 1e-5, |d| {
                        let mut s = store.clone();
                        s.get_mut(name).unwrap().data = d.to_vec();
                        tb_probe(&net, &s, &g, &batch, &log_r, plain).0
                    });
                    assert!(rel_error(an[i], num, 1e-4) < 1e-4, "{name}[{i}] {} vs {num}", an[i]);
                }
            }
        }
    }
}
