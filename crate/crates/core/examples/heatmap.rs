// Run the generator network on one instance and print its edge heatmap and
// log Z estimate.

use agfn::gnn::Mode;
use agfn::instance::{generate, GenConfig, ProblemKind};
use agfn::policy_net::{PolicyNet, PolicyNetConfig};
use agfn::sparse_graph::SparseGraph;

pub fn run_example() -> agfn::Result<()> {
    let g = SparseGraph::build(generate(&GenConfig::standard(20, 11), ProblemKind::Tsp)?)?;
    let net = PolicyNet::new(PolicyNetConfig::default(), g.node_feat_width, g.edge_feat_width)?;
    let store = net.init()?;
    println!("{} parameters", store.params().map(|(_, p)| p.tensor.data.len()).sum::<usize>());

    let (heat, log_z, _) = net.forward(&store, &g, Mode::Infer)?;
    println!("log Z = {log_z:.4}");
    for e in g.out_edges(0) {
        println!("  0 -> {:>2}  dist {:.3}  score {:.4}", g.dst[e], g.edge_dist[e], heat.scores[e]);
    }
    assert_eq!(heat.len(), g.n_edges());
    assert!(heat.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
