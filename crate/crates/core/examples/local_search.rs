// Improve sampled TSP and CVRP solutions with destroy-and-repair and 2-opt.

use agfn::decoder::{decode_batch, validate_trajectory, DecodeConfig};
use agfn::instance::{generate, GenConfig, ProblemKind};
use agfn::local_search::{improve, LocalSearchConfig, LsVariant};
use agfn::policy_net::Heatmap;
use agfn::sparse_graph::SparseGraph;

pub fn run_example() -> agfn::Result<()> {
    for kind in [ProblemKind::Tsp, ProblemKind::Cvrp] {
        let g = SparseGraph::build(generate(&GenConfig::standard(50, 21), kind)?)?;
        let start = decode_batch(&g, &Heatmap::uniform(g.n_edges(), 0.5), &DecodeConfig::training(3))?;
        let t = start.best();
        for variant in [LsVariant::DestroyRepair, LsVariant::TwoOpt] {
            let cfg = LocalSearchConfig {
                variant,
                ..Default::default()
            };
            let better = improve(t, &g.instance, &cfg)?;
            validate_trajectory(&better, &g.instance)?;
            println!("{kind} {variant:?}: {:.4} -> {:.4}", t.length, better.length);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
