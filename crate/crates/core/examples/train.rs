// A short adversarial training run on TSP-20 with a reduced configuration,
// printing each eval record.

use agfn::trainer::{TrainConfig, Trainer};

pub fn run_example() -> agfn::Result<()> {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(16);
    let cfg = TrainConfig {
        total_steps: steps,
        eval_every: (steps / 4).max(1),
        instances_per_step: 4,
        eval_instances: 8,
        ..Default::default()
    };
    let mut t = Trainer::new(cfg)?;
    t.run(|_, r| {
        println!(
            "step {:>4}  train tb {:>9}  disc {:>7}  eval best-of-20 {:.4}  eval tb {:.3}",
            r.step,
            r.train_tb_loss.map_or("-".into(), |v| format!("{v:.3}")),
            r.disc_loss.map_or("-".into(), |v| format!("{v:.4}")),
            r.eval_best_len,
            r.eval_tb_loss
        );
        Ok(())
    })?;
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
