// The command-line workflow from code: generate a test set, train, solve
// with hybrid decoding and sweep the hybrid probability.

use agfn::bench_cli::{self, GenDataArgs, ReferenceMethod, SolveArgs, SweepArgs};
use agfn::instance::ProblemKind;
use agfn::trainer::TrainConfig;

pub fn run_example() -> agfn::Result<()> {
    let root = std::env::temp_dir().join(format!("agfn-pipeline-{}", std::process::id()));
    let data = root.join("data");
    bench_cli::gen_data(&GenDataArgs {
        kind: ProblemKind::Tsp,
        n: 20,
        count: 8,
        seed: 5,
        out: data.clone(),
        force: true,
    })?;

    let cfg = TrainConfig {
        total_steps: 8,
        eval_every: 4,
        instances_per_step: 2,
        eval_instances: 4,
        checkpoint_dir: root.join("run"),
        ..Default::default()
    };
    let trained = bench_cli::train(cfg, false, |r| println!("step {:>3}  eval best {:.4}", r.step, r.eval_best_len))?;

    let solved = bench_cli::solve(&SolveArgs::new(trained.checkpoint.clone(), data.clone(), root.join("solve")))?;
    println!("hybrid P=0.05, N=100: mean objective {:.4}", solved.mean_obj);

    let rows = bench_cli::sweep_p(&SweepArgs {
        checkpoint: trained.checkpoint,
        instances: data,
        p_list: vec![0.05, 1.0],
        seeds: vec![0],
        n_rollouts: 100,
        reference: ReferenceMethod::NearestNeighborTwoOpt,
        out: root.join("sweep"),
    })?;
    for r in rows {
        println!("P = {:<4}  mean {:.4}  gap {:+.2}%", r.p, r.mean_obj, r.gap_pct);
    }
    std::fs::remove_dir_all(&root)?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
