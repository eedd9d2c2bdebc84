use agfn::autodiff::{Tape, Tensor};
use agfn::baselines::{held_karp, nearest_neighbor};
use agfn::decoder::{decode_batch, validate_trajectory, DecodeConfig, DecodeMode, Trajectory};
use agfn::discriminator::disc_loss;
use agfn::gflownet_loss::{forward_logprob, shaped_reward};
use agfn::instance::{generate, GenConfig, ProblemKind};
use agfn::policy_net::Heatmap;
use agfn::sparse_graph::SparseGraph;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn kind(cvrp: bool) -> ProblemKind {
    if cvrp {
        ProblemKind::Cvrp
    } else {
        ProblemKind::Tsp
    }
}

fn random_heatmap(n_edges: usize, seed: u64) -> Heatmap {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Heatmap::from_scores((0..n_edges).map(|_| rand::Rng::gen_range(&mut rng, 0.01..0.99)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollouts_feasible_with_consistent_logp(
        n in 3usize..30, cvrp in any::<bool>(), seed in any::<u64>(), p in 0.0f64..=1.0, temp in 0.5f64..2.0,
    ) {
        let g = SparseGraph::build(generate(&GenConfig::standard(n, seed), kind(cvrp)).unwrap()).unwrap();
        let heat = random_heatmap(g.n_edges(), seed ^ 1);
        let cfg = DecodeConfig { mode: DecodeMode::Hybrid, hybrid_p: p, n_rollouts: 8, seed, temperature: temp };
        for t in decode_batch(&g, &heat, &cfg).unwrap().trajectories {
            validate_trajectory(&t, &g.instance).unwrap();
            let replayed = forward_logprob(&t, &g, &heat, temp).unwrap();
            prop_assert!((replayed - t.log_pf()).abs() <= 1e-12 * t.log_pf().abs().max(1.0));
        }
    }

    #[test]
    fn best_of_n_never_increases_with_n(n in 5usize..25, cvrp in any::<bool>(), seed in any::<u64>()) {
        let g = SparseGraph::build(generate(&GenConfig::standard(n, seed), kind(cvrp)).unwrap()).unwrap();
        let heat = random_heatmap(g.n_edges(), seed);
        let best = |k| decode_batch(&g, &heat, &DecodeConfig { n_rollouts: k, ..DecodeConfig::training(seed) })
            .unwrap().best().length;
        prop_assert!(best(20) <= best(10));
        prop_assert!(best(10) <= best(5));
    }

    #[test]
    fn shaped_reward_shift_invariant(
        lengths in prop::collection::vec(0.1f64..50.0, 2..20), shift in -10.0f64..10.0, seed in any::<u64>(),
    ) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = lengths.iter().map(|_| rand::Rng::gen_range(&mut rng, 0.0..=1.0)).collect();
        let a = shaped_reward(&lengths, &scores).unwrap();
        let moved: Vec<f64> = lengths.iter().map(|l| l + shift).collect();
        let b = shaped_reward(&moved, &scores).unwrap();
        for (x, y) in a.neg_log_reward.iter().zip(&b.neg_log_reward) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn disc_loss_in_unit_interval(scores in prop::collection::vec(0.0f64..=1.0, 1..30), seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<bool> = scores.iter().map(|_| rand::Rng::gen(&mut rng)).collect();
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::new(vec![scores.len(), 1], scores.clone()).unwrap());
        let l = disc_loss(&mut tape, s, &labels).unwrap();
        let v = tape.scalar(l);
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn nearest_neighbor_feasible(n in 2usize..60, cvrp in any::<bool>(), seed in any::<u64>()) {
        let inst = generate(&GenConfig::standard(n, seed), kind(cvrp)).unwrap();
        validate_trajectory(&nearest_neighbor(&inst), &inst).unwrap();
    }
}

#[test]
fn held_karp_below_any_feasible_tour() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for seed in 0..100 {
        let n = 3 + (seed as usize % 8);
        let inst = generate(&GenConfig::standard(n, seed), ProblemKind::Tsp).unwrap();
        let opt = held_karp(&inst).unwrap().length;
        let mut perm: Vec<usize> = (0..n).collect();
        for _ in 0..50 {
            perm[1..].shuffle(&mut rng);
            let t = Trajectory::from_nodes(&inst, perm.clone());
            assert!(opt <= t.length + 1e-12, "seed {seed}: {opt} > {}", t.length);
        }
        assert!(opt <= nearest_neighbor(&inst).length + 1e-12);
    }
}
