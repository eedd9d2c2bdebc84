// Sparsify an instance to its k nearest neighbours and inspect the features
// the networks see.

use agfn::instance::{generate, GenConfig, ProblemKind};
use agfn::sparse_graph::{default_k, SparseGraph};

pub fn run_example() -> agfn::Result<()> {
    let inst = generate(&GenConfig::standard(40, 3), ProblemKind::Cvrp)?;
    let g = SparseGraph::build(inst)?;
    println!("{} nodes, k = {} (default for this size: {})", g.n_nodes, g.k, default_k(g.n_nodes));
    println!("{} directed edges, node features {}, edge features {}", g.n_edges(), g.node_feat_width, g.edge_feat_width);
    for e in g.out_edges(5) {
        println!("  5 -> {:>2}  dist {:.4}", g.dst[e], g.edge_dist[e]);
    }
    // depot edges survive sparsification in CVRP
    assert!(g.find_edge(5, 0).is_some());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
