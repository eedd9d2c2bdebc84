//! A discriminator trained on locally improved vs. sampled 20-node tours
//! learns to separate them.

use agfn::autodiff::{adam_step, AdamConfig, Tape};
use agfn::decoder::{decode_batch, DecodeConfig};
use agfn::discriminator::{disc_loss, DiscriminatorConfig, DiscriminatorNet, SolutionGraph};
use agfn::gnn::{apply_bn_updates, Mode};
use agfn::instance::{generate, GenConfig, ProblemKind};
use agfn::local_search::{improve, LocalSearchConfig};
use agfn::policy_net::Heatmap;
use agfn::sparse_graph::SparseGraph;

fn labeled_set(seeds: std::ops::Range<u64>) -> (Vec<SolutionGraph>, Vec<bool>) {
    let mut sols = Vec::new();
    let mut labels = Vec::new();
    for seed in seeds {
        let g = SparseGraph::build(generate(&GenConfig::standard(20, seed), ProblemKind::Tsp).unwrap()).unwrap();
        let cfg = DecodeConfig {
            n_rollouts: 4,
            ..DecodeConfig::training(seed)
        };
        for t in decode_batch(&g, &Heatmap::uniform(g.n_edges(), 0.5), &cfg).unwrap().trajectories {
            let better = improve(&t, &g.instance, &LocalSearchConfig::default()).unwrap();
            sols.push(SolutionGraph::encode(&better, &g).unwrap());
            labels.push(true);
            sols.push(SolutionGraph::encode(&t, &g).unwrap());
            labels.push(false);
        }
    }
    (sols, labels)
}

#[test]
fn trained_discriminator_separates_true_from_false() {
    let (train, train_labels) = labeled_set(0..6);
    let (held_out, held_labels) = labeled_set(100..104);
    let net = DiscriminatorNet::new(DiscriminatorConfig::default(), 2).unwrap();
    let mut store = net.init().unwrap();
    let refs: Vec<&SolutionGraph> = train.iter().collect();
    let adam = AdamConfig {
        lr: 1e-2,
        ..Default::default()
    };
    for _ in 0..60 {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let mut updates = Vec::new();
        let s = net
            .score_on_tape(&mut tape, &bound, &store, &refs, Mode::Train, &mut updates)
            .unwrap();
        let loss = disc_loss(&mut tape, s, &train_labels).unwrap();
        let grads = tape.backward(loss).unwrap();
        store.accumulate(&bound, &grads, 1.0);
        adam_step(&mut store, &adam);
        apply_bn_updates(&mut store, &updates);
    }
    let held: Vec<&SolutionGraph> = held_out.iter().collect();
    let scores = net.score_many(&store, &held).unwrap();
    let mean = |want: bool| {
        let v: Vec<f64> = scores
            .iter()
            .zip(&held_labels)
            .filter(|(_, &l)| l == want)
            .map(|(s, _)| *s)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let gap = mean(true) - mean(false);
    assert!(gap > 0.3, "separation {gap}");
}
