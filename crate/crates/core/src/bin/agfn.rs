use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agfn::bench_cli::{self, AblateArgs, GenDataArgs, ReferenceMethod, SolveArgs, SweepArgs, Variant};
use agfn::decoder::DecodeMode;
use agfn::instance::ProblemKind;
use agfn::trainer::{TrainConfig, TrainLogRecord};
use agfn::Result;

#[derive(Parser)]
#[command(name = "agfn", version, about = "Adversarial GFlowNet solver for TSP and CVRP")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate random instances
    GenData {
        #[arg(long)]
        kind: ProblemKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write into a non-empty output directory
        #[arg(long)]
        force: bool,
    },
    /// Train a generator/discriminator pair
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from checkpoint_latest.bin in the checkpoint directory
        #[arg(long)]
        resume: bool,
    },
    /// Decode instances with a trained model
    Solve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, default_value = "hybrid")]
        mode: DecodeMode,
        #[arg(long, default_value_t = 0.05)]
        p: f64,
        #[arg(long, default_value_t = 100)]
        n_rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hybrid-decoding objective for a list of P values
    SweepP {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.03,0.05,0.07,0.1")]
        p_list: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 100)]
        n_rollouts: usize,
        #[arg(long, default_value = "nn_two_opt")]
        reference: ReferenceMethod,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train several variants and emit their eval curves
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "adversary_on,adversary_off")]
        variants: Vec<Variant>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_record(prefix: &str, r: &TrainLogRecord) {
    let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{prefix}step {:>6}  tb {:>10}  disc {:>8}  eval mean {:.4}  best {:.4}  eval tb {:.4}",
        r.step,
        opt(r.train_tb_loss),
        opt(r.disc_loss),
        r.eval_mean_len,
        r.eval_best_len,
        r.eval_tb_loss
    );
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData {
            kind,
            n,
            count,
            seed,
            out,
            force,
        } => {
            let index = bench_cli::gen_data(&GenDataArgs {
                kind,
                n,
                count,
                seed,
                out: out.clone(),
                force,
            })?;
            println!("wrote {} instances to {}", index.len(), out.display());
        }
        Cmd::Train { config, resume } => {
            let cfg = TrainConfig::from_path(&config)?;
            let out = bench_cli::train(cfg, resume, |r| print_record("", r))?;
            println!("checkpoint {}", out.checkpoint.display());
        }
        Cmd::Solve {
            checkpoint,
            instances,
            mode,
            p,
            n_rollouts,
            seed,
            temperature,
            out,
        } => {
            let res = bench_cli::solve(&SolveArgs {
                checkpoint,
                instances,
                mode,
                p,
                n_rollouts,
                seed,
                temperature,
                out: out.clone(),
            })?;
            println!(
                "solved {} instances, mean objective {:.6}; results in {}",
                res.rows.len(),
                res.mean_obj,
                out.display()
            );
        }
        Cmd::SweepP {
            checkpoint,
            instances,
            p_list,
            seeds,
            n_rollouts,
            reference,
            out,
        } => {
            let rows = bench_cli::sweep_p(&SweepArgs {
                checkpoint,
                instances,
                p_list,
                seeds,
                n_rollouts,
                reference,
                out,
            })?;
            println!("{:>6}  {:>10}  {:>8}", "p", "mean_obj", "gap_pct");
            for r in rows {
                println!("{:>6}  {:>10.6}  {:>8.3}", r.p, r.mean_obj, r.gap_pct);
            }
        }
        Cmd::Ablate {
            config,
            variants,
            seeds,
            out,
        } => {
            let cfg = TrainConfig::from_path(&config)?;
            let res = bench_cli::ablate(
                &AblateArgs {
                    config: cfg,
                    variants,
                    seeds,
                    out,
                },
                |v, s, r| print_record(&format!("[{v} seed {s}] "), r),
            )?;
            println!("merged curves in {}", res.merged.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("agfn: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
