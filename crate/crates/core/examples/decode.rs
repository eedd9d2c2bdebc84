// Sampling, greedy and hybrid decoding from a heatmap.

use agfn::decoder::{decode_batch, validate_trajectory, DecodeConfig, DecodeMode};
use agfn::instance::{generate, GenConfig, ProblemKind};
use agfn::policy_net::Heatmap;
use agfn::sparse_graph::SparseGraph;

pub fn run_example() -> agfn::Result<()> {
    let g = SparseGraph::build(generate(&GenConfig::standard(30, 5), ProblemKind::Cvrp)?)?;
    // a hand-made heatmap preferring short edges
    let heat = Heatmap::from_scores(g.edge_dist.iter().map(|d| (-5.0 * d).exp().clamp(1e-6, 1.0 - 1e-6)).collect())?;

    for (mode, p) in [(DecodeMode::Greedy, 0.0), (DecodeMode::Sample, 1.0), (DecodeMode::Hybrid, 0.05)] {
        let cfg = DecodeConfig {
            mode,
            hybrid_p: p,
            n_rollouts: 100,
            seed: 1,
            temperature: 1.0,
        };
        let r = decode_batch(&g, &heat, &cfg)?;
        let best = r.best();
        validate_trajectory(best, &g.instance)?;
        let mean = r.trajectories.iter().map(|t| t.length).sum::<f64>() / r.trajectories.len() as f64;
        println!(
            "{:>6?}: {:>3} rollouts, mean {:.4}, best {:.4} over {} routes, log P_F {:.2}",
            mode,
            r.trajectories.len(),
            mean,
            best.length,
            best.routes().len(),
            best.log_pf()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
