// Shaped rewards and the trajectory-balance loss for a batch of sampled
// tours, with the gradient it sends into log Z.

use agfn::autodiff::{Tape, Tensor};
use agfn::decoder::{decode_batch, DecodeConfig};
use agfn::gflownet_loss::{backward_logprob, forward_logprob, shaped_reward, tb_loss, PbMode};
use agfn::instance::{generate, GenConfig, ProblemKind};
use agfn::policy_net::Heatmap;
use agfn::sparse_graph::SparseGraph;

pub fn run_example() -> agfn::Result<()> {
    let batch = shaped_reward(&[10.0, 12.0], &[0.5, 0.5])?;
    println!("-log R~ for lengths [10, 12], S = 0.5: {:?}", batch.neg_log_reward);

    let g = SparseGraph::build(generate(&GenConfig::standard(12, 2), ProblemKind::Tsp)?)?;
    let heat = Heatmap::uniform(g.n_edges(), 0.5);
    let r = decode_batch(&g, &heat, &DecodeConfig::training(4))?;
    let lengths: Vec<f64> = r.trajectories.iter().map(|t| t.length).collect();
    let rewards = shaped_reward(&lengths, &vec![0.5; lengths.len()])?;

    // replaying a trajectory reproduces the log-probability cached while decoding
    let t0 = &r.trajectories[0];
    assert!((forward_logprob(t0, &g, &heat, 1.0)? - t0.log_pf()).abs() < 1e-12);

    let k = lengths.len();
    let log_pb = vec![backward_logprob(&g.instance, PbMode::Unique); k];
    let mut tape = Tape::new();
    let log_z = tape.param(Tensor::new(vec![1], vec![0.0])?);
    let log_pf = tape.constant(Tensor::new(vec![k], r.trajectories.iter().map(|t| t.log_pf()).collect())?);
    let loss = tb_loss(&mut tape, log_z, log_pf, &rewards.log_reward(), &log_pb)?;
    let grads = tape.backward(loss)?;
    println!("TB loss {:.4} at log Z = 0, dL/dlogZ = {:.4}", tape.scalar(loss), grads.get(log_z)[0]);

    // the loss is minimized over log Z at minus the mean residual
    let best_log_z = r
        .trajectories
        .iter()
        .zip(rewards.log_reward())
        .map(|(t, lr)| lr - t.log_pf())
        .sum::<f64>()
        / k as f64;
    println!("optimal log Z for this batch: {best_log_z:.4}");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
