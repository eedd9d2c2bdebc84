// Score generator routes and their locally improved versions with a fresh
// discriminator, then train it for a few steps to separate the two.

use agfn::autodiff::{adam_step, AdamConfig, Tape};
use agfn::decoder::{decode_batch, DecodeConfig};
use agfn::discriminator::{disc_loss, DiscriminatorConfig, DiscriminatorNet, SolutionGraph};
use agfn::gnn::{apply_bn_updates, Mode};
use agfn::instance::{generate, GenConfig, ProblemKind};
use agfn::local_search::{improve, LocalSearchConfig};
use agfn::policy_net::Heatmap;
use agfn::sparse_graph::SparseGraph;

pub fn run_example() -> agfn::Result<()> {
    let g = SparseGraph::build(generate(&GenConfig::standard(20, 9), ProblemKind::Tsp)?)?;
    let routes = decode_batch(&g, &Heatmap::uniform(g.n_edges(), 0.5), &DecodeConfig::training(0))?.trajectories;
    let improved = routes
        .iter()
        .map(|t| improve(t, &g.instance, &LocalSearchConfig::default()))
        .collect::<agfn::Result<Vec<_>>>()?;

    let mut sols = Vec::new();
    let mut labels = Vec::new();
    for (t, label) in improved.iter().map(|t| (t, true)).chain(routes.iter().map(|t| (t, false))) {
        sols.push(SolutionGraph::encode(t, &g)?);
        labels.push(label);
    }
    let refs: Vec<&SolutionGraph> = sols.iter().collect();

    let net = DiscriminatorNet::new(DiscriminatorConfig::default(), g.node_feat_width)?;
    let mut store = net.init()?;
    let adam = AdamConfig { lr: 1e-2, ..Default::default() };
    for step in 0..=30 {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let mut updates = Vec::new();
        let scores = net.score_on_tape(&mut tape, &bound, &store, &refs, Mode::Train, &mut updates)?;
        let loss = disc_loss(&mut tape, scores, &labels)?;
        if step % 10 == 0 {
            println!("step {step:>2}  disc loss {:.4}", tape.scalar(loss));
        }
        let grads = tape.backward(loss)?;
        store.accumulate(&bound, &grads, 1.0);
        adam_step(&mut store, &adam);
        apply_bn_updates(&mut store, &updates);
    }
    let s = net.score_many(&store, &refs)?;
    let half = s.len() / 2;
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    println!("mean score: improved {:.3}, sampled {:.3}", mean(&s[..half]), mean(&s[half..]));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
