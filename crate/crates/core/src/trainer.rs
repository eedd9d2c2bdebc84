//! Adversarial training loop.
//!
//! Each step draws fresh instances, samples K routes per instance from the
//! generator, scores them with the frozen discriminator, and takes one Adam
//! step on the trajectory-balance loss. Every `gen_steps_per_disc_step`
//! steps the discriminator is trained to tell fresh generator routes
//! ("false") from their locally improved versions ("true").
//!
//! All randomness is keyed by `(seed, purpose, step, index)`, so a run
//! resumed from a checkpoint continues exactly as the uninterrupted run.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, Checkpoint, ParameterStore, Tape};
use crate::decoder::{decode_batch, DecodeConfig, DecodeMode, Trajectory};
use crate::discriminator::{disc_loss, DiscriminatorConfig, DiscriminatorNet, SolutionGraph};
use crate::error::{AgfnError, Result};
use crate::gflownet_loss::{
    backward_logprob, forward_logprob_on_tape, plain_log_reward, shaped_reward, tb_loss, PbMode, ReplayBatch,
};
use crate::gnn::{apply_bn_updates, Mode};
use crate::instance::{generate, GenConfig, ProblemKind};
use crate::local_search::{improve, LocalSearchConfig};
use crate::policy_net::{heatmap_slice, PolicyNet, PolicyNetConfig};
use crate::rng::{derive_seed, Stream};
use crate::sparse_graph::SparseGraph;

/// Environment variable that overrides `checkpoint_dir`.
pub const CHECKPOINT_DIR_ENV: &str = "AGFN_CHECKPOINT_DIR";

pub const GENERATOR_STORE: &str = "generator";
pub const DISCRIMINATOR_STORE: &str = "discriminator";

/// Which reward the generator is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Discriminator-shaped reward.
    #[default]
    Shaped,
    /// `exp(-length / T)` with `T = t_reward_scale * n_nodes`.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: ProblemKind,
    pub n_customers: usize,
    pub instances_per_step: usize,
    pub rollouts_per_instance: usize,
    pub gen_steps_per_disc_step: usize,
    /// False routes per instance in a discriminator step.
    pub disc_rollouts_per_instance: usize,
    pub total_steps: u64,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub eval_every: u64,
    pub eval_instances: usize,
    pub eval_rollouts: usize,
    pub seed: u64,
    pub adversary_enabled: bool,
    pub pb_mode: PbMode,
    pub objective: Objective,
    pub t_reward_scale: f64,
    pub temperature: f64,
    pub checkpoint_dir: PathBuf,
    pub policy: PolicyNetConfig,
    pub discriminator: DiscriminatorConfig,
    pub local_search: LocalSearchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            problem: ProblemKind::Tsp,
            n_customers: 20,
            instances_per_step: 8,
            rollouts_per_instance: 20,
            gen_steps_per_disc_step: 4,
            disc_rollouts_per_instance: 4,
            total_steps: 500,
            lr_gen: 1e-3,
            lr_disc: 1e-3,
            eval_every: 50,
            eval_instances: 32,
            eval_rollouts: 20,
            seed: 0,
            adversary_enabled: true,
            pb_mode: PbMode::Unique,
            objective: Objective::Shaped,
            t_reward_scale: 0.1,
            temperature: 1.0,
            checkpoint_dir: PathBuf::from("runs/train"),
            policy: PolicyNetConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            local_search: LocalSearchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgfnError::Config(m.to_string()));
        if self.n_customers < 2 {
            return bad("n_customers must be at least 2");
        }
        if self.instances_per_step == 0 || self.rollouts_per_instance == 0 {
            return bad("instances_per_step and rollouts_per_instance must be positive");
        }
        if self.adversary_enabled && self.rollouts_per_instance < 2 {
            return bad("the shaped reward needs at least 2 rollouts per instance");
        }
        if self.gen_steps_per_disc_step == 0 || self.disc_rollouts_per_instance == 0 {
            return bad("gen_steps_per_disc_step and disc_rollouts_per_instance must be at least 1");
        }
        if !(self.lr_gen > 0.0 && self.lr_disc > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.eval_every == 0 || self.eval_instances == 0 || self.eval_rollouts == 0 {
            return bad("eval_every, eval_instances and eval_rollouts must be positive");
        }
        if !(self.t_reward_scale > 0.0) || !(self.temperature > 0.0) {
            return bad("t_reward_scale and temperature must be positive");
        }
        self.policy.validate()?;
        self.discriminator.validate()?;
        self.local_search.validate()?;
        Ok(())
    }

    /// Reads a JSON or TOML file (chosen by extension; anything else is tried
    /// as JSON, then TOML) and applies the checkpoint-dir override.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgfnError::Config(format!("cannot read {}: {e}", path.display())))?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let cfg = match ext {
            "toml" => Self::from_toml(&text)?,
            "json" => Self::from_json(&text)?,
            _ => Self::from_json(&text).or_else(|_| Self::from_toml(&text))?,
        };
        let cfg = cfg.with_env_override();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AgfnError::Config(format!("bad JSON config: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| AgfnError::Config(format!("bad TOML config: {e}")))
    }

    pub fn with_env_override(mut self) -> Self {
        if let Some(dir) = std::env::var_os(CHECKPOINT_DIR_ENV) {
            if !dir.is_empty() {
                self.checkpoint_dir = PathBuf::from(dir);
            }
        }
        self
    }

    pub fn n_nodes(&self) -> usize {
        match self.problem {
            ProblemKind::Tsp => self.n_customers,
            ProblemKind::Cvrp => self.n_customers + 1,
        }
    }

    fn node_width(&self) -> usize {
        SparseGraph::node_width_for(self.problem)
    }
}

/// One line of `train_log.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    /// Mean generator TB loss over the steps since the previous record.
    pub train_tb_loss: Option<f64>,
    /// Mean discriminator loss over the same window; null without adversary.
    pub disc_loss: Option<f64>,
    /// Mean over eval instances of the mean rollout length.
    pub eval_mean_len: f64,
    /// Mean over eval instances of the best rollout length.
    pub eval_best_len: f64,
    /// TB loss of the eval rollouts.
    pub eval_tb_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub mean_len: f64,
    pub best_len: f64,
    pub tb_loss: f64,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub policy: PolicyNet,
    pub disc: DiscriminatorNet,
    pub gen_store: ParameterStore,
    pub disc_store: ParameterStore,
    pub step: u64,
    pub log: Vec<TrainLogRecord>,
    eval_set: Vec<SparseGraph>,
    window_tb: Vec<f64>,
    window_disc: Vec<f64>,
}

fn instance_graph(cfg: &TrainConfig, seed: u64, name: String) -> Result<SparseGraph> {
    let mut inst = generate(&GenConfig::standard(cfg.n_customers, seed), cfg.problem)?;
    inst.name = name;
    SparseGraph::build(inst)
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        // initialization follows the run seed; the sub-config seeds pick
        // among inits for the same run seed
        let pcfg = PolicyNetConfig {
            seed: derive_seed(cfg.seed, Stream::Init, 0, cfg.policy.seed),
            ..cfg.policy.clone()
        };
        let dcfg = DiscriminatorConfig {
            seed: derive_seed(cfg.seed, Stream::Init, 1, cfg.discriminator.seed),
            ..cfg.discriminator.clone()
        };
        let policy = PolicyNet::new(pcfg, cfg.node_width(), 1)?;
        let disc = DiscriminatorNet::new(dcfg, cfg.node_width())?;
        let gen_store = policy.init()?;
        let disc_store = disc.init()?;
        let eval_set = (0..cfg.eval_instances)
            .map(|i| instance_graph(&cfg, derive_seed(cfg.seed, Stream::EvalInstances, i as u64, 0), format!("eval-{i}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trainer {
            cfg,
            policy,
            disc,
            gen_store,
            disc_store,
            step: 0,
            log: Vec::new(),
            eval_set,
            window_tb: Vec::new(),
            window_disc: Vec::new(),
        })
    }

    /// Restores stores, step and log from a checkpoint written by
    /// [`Trainer::checkpoint`]. The checkpoint's config must match `cfg`
    /// apart from `total_steps` and `checkpoint_dir`.
    pub fn resume(cfg: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Trainer::new(cfg)?;
        let saved: TrainConfig = serde_json::from_value(ckpt.meta["config"].clone())
            .map_err(|e| AgfnError::Checkpoint(format!("checkpoint config unreadable: {e}")))?;
        let comparable = |c: &TrainConfig| TrainConfig {
            total_steps: 0,
            checkpoint_dir: PathBuf::new(),
            ..c.clone()
        };
        if comparable(&saved) != comparable(&t.cfg) {
            return Err(AgfnError::Checkpoint("checkpoint was written with a different configuration".into()));
        }
        let gen = ckpt.store(GENERATOR_STORE)?.clone();
        let disc = ckpt.store(DISCRIMINATOR_STORE)?.clone();
        t.policy.check_store(&gen)?;
        t.gen_store = gen;
        t.disc_store = disc;
        t.step = ckpt.meta["step"]
            .as_u64()
            .ok_or_else(|| AgfnError::Checkpoint("checkpoint has no step".into()))?;
        t.log = serde_json::from_value(ckpt.meta["log"].clone())
            .map_err(|e| AgfnError::Checkpoint(format!("checkpoint log unreadable: {e}")))?;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint {
            meta: serde_json::json!({
                "config": self.cfg,
                "step": self.step,
                "log": self.log,
            }),
            ..Default::default()
        };
        c.stores.insert(GENERATOR_STORE.into(), self.gen_store.clone());
        c.stores.insert(DISCRIMINATOR_STORE.into(), self.disc_store.clone());
        c
    }

    pub fn eval_set(&self) -> &[SparseGraph] {
        &self.eval_set
    }

    /// Fresh training instances for `step`.
    pub fn train_batch(&self, step: u64) -> Result<Vec<SparseGraph>> {
        (0..self.cfg.instances_per_step)
            .map(|b| {
                instance_graph(
                    &self.cfg,
                    derive_seed(self.cfg.seed, Stream::TrainInstances, step, b as u64),
                    format!("train-{step}-{b}"),
                )
            })
            .collect()
    }

    fn sample_cfg(&self, stream: Stream, step: u64, b: usize, n: usize) -> DecodeConfig {
        DecodeConfig {
            mode: DecodeMode::Sample,
            hybrid_p: 1.0,
            n_rollouts: n,
            seed: derive_seed(self.cfg.seed, stream, step, b as u64),
            temperature: self.cfg.temperature,
        }
    }

    /// Discriminator scores in inference mode, or 0.5 for every route when
    /// the adversary is off.
    fn scores(&self, trajs: &[Trajectory], g: &SparseGraph) -> Result<Vec<f64>> {
        if !self.cfg.adversary_enabled {
            return Ok(vec![0.5; trajs.len()]);
        }
        let sols = trajs
            .iter()
            .map(|t| SolutionGraph::encode(t, g))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&SolutionGraph> = sols.iter().collect();
        self.disc.score_many(&self.disc_store, &refs)
    }

    fn log_rewards(&self, trajs: &[Trajectory], g: &SparseGraph) -> Result<Vec<f64>> {
        let lengths: Vec<f64> = trajs.iter().map(|t| t.length).collect();
        match self.cfg.objective {
            Objective::Shaped => {
                let s = self.scores(trajs, g)?;
                Ok(shaped_reward(&lengths, &s)?.log_reward())
            }
            Objective::Plain => {
                let t = self.cfg.t_reward_scale * g.n_nodes as f64;
                Ok(lengths.iter().map(|&l| plain_log_reward(l, t)).collect())
            }
        }
    }

    /// One generator update on `graphs`; returns the mean TB loss.
    pub fn generator_step(&mut self, graphs: &[SparseGraph], step: u64) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.gen_store.bind(&mut tape);
        let refs: Vec<&SparseGraph> = graphs.iter().collect();
        let out = self
            .policy
            .forward_batch_on_tape(&mut tape, &bound, &self.gen_store, &refs, Mode::Train)?;
        let mut total = None;
        for (b, g) in graphs.iter().enumerate() {
            let rows = out.edge_offsets[b]..out.edge_offsets[b + 1];
            let heat = heatmap_slice(&tape, out.logits, out.log_heat, rows);
            let cfg = self.sample_cfg(Stream::Rollout, step, b, self.cfg.rollouts_per_instance);
            let trajs = decode_batch(g, &heat, &cfg)?.trajectories;
            let log_r = self.log_rewards(&trajs, g)?;
            let log_pb = vec![backward_logprob(&g.instance, self.cfg.pb_mode); trajs.len()];
            let replay = ReplayBatch::build(&trajs, g, self.cfg.temperature)?;
            let lp = forward_logprob_on_tape(&mut tape, out.log_heat, out.edge_offsets[b], &replay)?;
            let log_z = tape.gather(out.log_z, &[b])?;
            let loss = tb_loss(&mut tape, log_z, lp, &log_r, &log_pb)?;
            total = Some(match total {
                None => loss,
                Some(t) => tape.add(t, loss)?,
            });
        }
        let total = total.ok_or_else(|| AgfnError::Usage("generator step on an empty batch".into()))?;
        let loss = tape.mul_scalar(total, 1.0 / graphs.len() as f64);
        let value = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        self.gen_store.accumulate(&bound, &grads, 1.0);
        if !value.is_finite() || !self.gen_store.grads_finite() {
            return Err(self.diverged(step, "generator", value));
        }
        adam_step(&mut self.gen_store, &AdamConfig { lr: self.cfg.lr_gen, ..Default::default() });
        apply_bn_updates(&mut self.gen_store, &out.bn_updates);
        Ok(value)
    }

    /// One discriminator update on `graphs`; returns the discriminator loss.
    pub fn discriminator_step(&mut self, graphs: &[SparseGraph], step: u64) -> Result<f64> {
        let mut tape = Tape::new();
        let frozen = self.gen_store.bind_frozen(&mut tape);
        let refs: Vec<&SparseGraph> = graphs.iter().collect();
        let out = self
            .policy
            .forward_batch_on_tape(&mut tape, &frozen, &self.gen_store, &refs, Mode::Train)?;
        let mut false_set = Vec::new();
        for (b, g) in graphs.iter().enumerate() {
            let rows = out.edge_offsets[b]..out.edge_offsets[b + 1];
            let heat = heatmap_slice(&tape, out.logits, out.log_heat, rows);
            let cfg = self.sample_cfg(Stream::DiscRollout, step, b, self.cfg.disc_rollouts_per_instance);
            for t in decode_batch(g, &heat, &cfg)?.trajectories {
                false_set.push((b, t));
            }
        }
        let true_set = false_set
            .par_iter()
            .enumerate()
            .map(|(i, (b, t))| {
                let ls = LocalSearchConfig {
                    seed: derive_seed(self.cfg.seed, Stream::LocalSearch, step, i as u64),
                    ..self.cfg.local_search
                };
                Ok((*b, improve(t, &graphs[*b].instance, &ls)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sols = Vec::with_capacity(2 * false_set.len());
        let mut labels = Vec::with_capacity(2 * false_set.len());
        for (set, label) in [(&true_set, true), (&false_set, false)] {
            for (b, t) in set.iter() {
                sols.push(SolutionGraph::encode(t, &graphs[*b])?);
                labels.push(label);
            }
        }
        let sol_refs: Vec<&SolutionGraph> = sols.iter().collect();
        let mut tape = Tape::new();
        let bound = self.disc_store.bind(&mut tape);
        let mut updates = Vec::new();
        let scores = self
            .disc
            .score_on_tape(&mut tape, &bound, &self.disc_store, &sol_refs, Mode::Train, &mut updates)?;
        let loss = disc_loss(&mut tape, scores, &labels)?;
        let value = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        self.disc_store.accumulate(&bound, &grads, 1.0);
        if !value.is_finite() || !self.disc_store.grads_finite() {
            return Err(self.diverged(step, "discriminator", value));
        }
        adam_step(&mut self.disc_store, &AdamConfig { lr: self.cfg.lr_disc, ..Default::default() });
        apply_bn_updates(&mut self.disc_store, &updates);
        Ok(value)
    }

    fn diverged(&self, step: u64, which: &str, loss: f64) -> AgfnError {
        let dump = self.cfg.checkpoint_dir.join(format!("diverged_step{step}.json"));
        let info = serde_json::json!({
            "step": step,
            "network": which,
            "loss": format!("{loss}"),
            "generator_fingerprint": self.gen_store.fingerprint(),
            "discriminator_fingerprint": self.disc_store.fingerprint(),
        });
        let written = std::fs::create_dir_all(&self.cfg.checkpoint_dir)
            .and_then(|_| std::fs::write(&dump, serde_json::to_vec_pretty(&info).unwrap_or_default()))
            .is_ok();
        let at = if written {
            format!("; diagnostics in {}", dump.display())
        } else {
            String::new()
        };
        AgfnError::Diverged(format!("{which} loss {loss} or its gradient is not finite at step {step}{at}"))
    }

    /// Whether the discriminator trains after generator step `step` (1-based).
    pub fn disc_step_due(&self, step: u64) -> bool {
        self.cfg.adversary_enabled && step % self.cfg.gen_steps_per_disc_step as u64 == 0
    }

    /// Generator update plus the scheduled discriminator update for the next
    /// step.
    pub fn train_step(&mut self) -> Result<()> {
        let step = self.step + 1;
        let graphs = self.train_batch(step)?;
        let l = self.generator_step(&graphs, step)?;
        self.window_tb.push(l);
        if self.disc_step_due(step) {
            let d = self.discriminator_step(&graphs, step)?;
            self.window_disc.push(d);
        }
        self.step = step;
        Ok(())
    }

    /// Sampled rollouts on the frozen eval set with the current parameters.
    pub fn evaluate(&self) -> Result<EvalResult> {
        let mut mean = 0.0;
        let mut best = 0.0;
        let mut tb = 0.0;
        for (i, g) in self.eval_set.iter().enumerate() {
            let (heat, log_z, _) = self.policy.forward(&self.gen_store, g, Mode::Infer)?;
            let cfg = DecodeConfig {
                mode: DecodeMode::Sample,
                hybrid_p: 1.0,
                n_rollouts: self.cfg.eval_rollouts,
                seed: derive_seed(self.cfg.seed, Stream::EvalInstances, i as u64, 1),
                temperature: self.cfg.temperature,
            };
            let r = decode_batch(g, &heat, &cfg)?;
            let k = r.trajectories.len() as f64;
            mean += r.trajectories.iter().map(|t| t.length).sum::<f64>() / k;
            best += r.best().length;
            let log_r = self.log_rewards(&r.trajectories, g)?;
            let log_pb = backward_logprob(&g.instance, self.cfg.pb_mode);
            tb += r
                .trajectories
                .iter()
                .zip(&log_r)
                .map(|(t, lr)| (log_z + t.log_pf() - lr - log_pb).powi(2))
                .sum::<f64>()
                / k;
        }
        let n = self.eval_set.len() as f64;
        Ok(EvalResult {
            mean_len: mean / n,
            best_len: best / n,
            tb_loss: tb / n,
        })
    }

    fn record(&mut self) -> Result<TrainLogRecord> {
        let e = self.evaluate()?;
        let avg = |w: &[f64]| (!w.is_empty()).then(|| w.iter().sum::<f64>() / w.len() as f64);
        let rec = TrainLogRecord {
            step: self.step,
            train_tb_loss: avg(&self.window_tb),
            disc_loss: avg(&self.window_disc),
            eval_mean_len: e.mean_len,
            eval_best_len: e.best_len,
            eval_tb_loss: e.tb_loss,
        };
        self.window_tb.clear();
        self.window_disc.clear();
        self.log.push(rec.clone());
        Ok(rec)
    }

    /// Runs to `total_steps`, evaluating at step 0 (unless resuming), every
    /// `eval_every` steps and at the end. `on_record` sees the trainer right
    /// after each record is appended; an error from it stops the run.
    pub fn run(&mut self, mut on_record: impl FnMut(&Trainer, &TrainLogRecord) -> Result<()>) -> Result<()> {
        if self.log.is_empty() {
            let r = self.record()?;
            on_record(self, &r)?;
        }
        while self.step < self.cfg.total_steps {
            self.train_step()?;
            if self.step % self.cfg.eval_every == 0 || self.step == self.cfg.total_steps {
                let r = self.record()?;
                on_record(self, &r)?;
            }
        }
        Ok(())
    }
}

/// Paths produced by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub records: Vec<TrainLogRecord>,
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint_step{step:06}.bin"))
}

pub fn latest_checkpoint(dir: &Path) -> PathBuf {
    dir.join("checkpoint_latest.bin")
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Full training run writing into `cfg.checkpoint_dir`: `train_log.jsonl`
/// (one record per eval point), `timings.csv` (wall-clock seconds, kept apart
/// so the log is reproducible) and a checkpoint per eval point plus
/// `checkpoint_latest.bin`. With `resume` the run continues from the latest
/// checkpoint when there is one.
pub fn train(cfg: TrainConfig, resume: bool, mut progress: impl FnMut(&TrainLogRecord)) -> Result<TrainOutcome> {
    let dir = cfg.checkpoint_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let latest = latest_checkpoint(&dir);
    let resuming = resume && latest.exists();
    let mut trainer = if resuming {
        Trainer::resume(cfg, &Checkpoint::load(&latest)?)?
    } else {
        Trainer::new(cfg)?
    };

    // rewrite the log from the checkpoint so a crash after the last save
    // leaves no orphan lines
    let log_path = dir.join("train_log.jsonl");
    let mut text = String::new();
    for r in &trainer.log {
        text += &serde_json::to_string(r)?;
        text.push('\n');
    }
    std::fs::write(&log_path, text)?;
    let timing_path = dir.join("timings.csv");
    if !(resuming && timing_path.exists()) {
        let mut w = csv::Writer::from_path(&timing_path)?;
        w.write_record(["step", "wall_clock_s"])?;
        w.flush()?;
    }

    let started = Instant::now();
    trainer.run(|t, r| {
        append_line(&log_path, &serde_json::to_string(r)?)?;
        let f = std::fs::OpenOptions::new().append(true).open(&timing_path)?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
        w.serialize((r.step, started.elapsed().as_secs_f64()))?;
        w.flush()?;
        let ck = t.checkpoint();
        ck.save(&checkpoint_path(&dir, r.step))?;
        ck.save(&latest)?;
        progress(r);
        Ok(())
    })?;
    Ok(TrainOutcome {
        checkpoint: latest,
        log: log_path,
        records: trainer.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(adversary: bool) -> TrainConfig {
        TrainConfig {
            n_customers: 8,
            instances_per_step: 2,
            rollouts_per_instance: 4,
            disc_rollouts_per_instance: 2,
            total_steps: 8,
            eval_every: 4,
            eval_instances: 2,
            eval_rollouts: 4,
            adversary_enabled: adversary,
            seed: 3,
            policy: PolicyNetConfig {
                hidden_dim: 8,
                n_layers: 2,
                mlp_hidden: vec![8],
                logz_hidden: vec![8],
                ..Default::default()
            },
            discriminator: DiscriminatorConfig {
                hidden_dim: 4,
                n_layers: 1,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig {
            rollouts_per_instance: 1,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(AgfnError::Config(_))));
        let ok = TrainConfig {
            adversary_enabled: false,
            ..bad
        };
        ok.validate().unwrap();
        let ratio = TrainConfig {
            gen_steps_per_disc_step: 0,
            ..Default::default()
        };
        assert!(ratio.validate().is_err());
    }

    #[test]
    fn config_files_parse() {
        let c = TrainConfig::from_toml("n_customers = 12\nadversary_enabled = false\npb_mode = \"symmetric\"\n").unwrap();
        assert_eq!(c.n_customers, 12);
        assert!(!c.adversary_enabled);
        assert_eq!(c.pb_mode, PbMode::Symmetric);
        assert_eq!(c.rollouts_per_instance, 20);
        assert_eq!(c.gen_steps_per_disc_step, 4);
        let j = TrainConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(j, c);
        assert!(matches!(
            TrainConfig::from_json("{\"n_customer\": 3}"),
            Err(AgfnError::Config(_))
        ));
    }

    #[test]
    fn disc_schedule() {
        let t = Trainer::new(tiny(true)).unwrap();
        let due: Vec<u64> = (1..=12).filter(|&s| t.disc_step_due(s)).collect();
        assert_eq!(due, vec![4, 8, 12]);
        let off = Trainer::new(tiny(false)).unwrap();
        assert!((1..=12).all(|s| !off.disc_step_due(s)));
    }

    #[test]
    fn steps_touch_only_their_store() {
        let mut t = Trainer::new(tiny(true)).unwrap();
        let graphs = t.train_batch(1).unwrap();
        let (g0, d0) = (t.gen_store.fingerprint(), t.disc_store.fingerprint());
        t.generator_step(&graphs, 1).unwrap();
        assert_ne!(t.gen_store.fingerprint(), g0);
        assert_eq!(t.disc_store.fingerprint(), d0);
        let g1 = t.gen_store.fingerprint();
        t.discriminator_step(&graphs, 1).unwrap();
        assert_eq!(t.gen_store.fingerprint(), g1);
        assert_ne!(t.disc_store.fingerprint(), d0);
    }

    #[test]
    fn eval_and_train_instances_disjoint() {
        let t = Trainer::new(tiny(true)).unwrap();
        for s in 1..=8 {
            for g in t.train_batch(s).unwrap() {
                assert!(t.eval_set().iter().all(|e| e.instance.coords != g.instance.coords));
            }
        }
    }

    #[test]
    fn runs_are_deterministic_and_logged() {
        let run = |adv| {
            let mut t = Trainer::new(tiny(adv)).unwrap();
            t.run(|_, _| Ok(())).unwrap();
            (t.log, t.gen_store.fingerprint())
        };
        let (a, fa) = run(true);
        let (b, fb) = run(true);
        assert_eq!(a, b);
        assert_eq!(fa, fb);
        assert_eq!(a.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 4, 8]);
        assert!(a[0].train_tb_loss.is_none());
        assert!(a[1].disc_loss.is_some());
        let (off, _) = run(false);
        assert!(off.iter().all(|r| r.disc_loss.is_none()));
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let full_dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            checkpoint_dir: full_dir.path().to_path_buf(),
            ..tiny(true)
        };
        let full = train(cfg.clone(), false, |_| {}).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let half = TrainConfig {
            checkpoint_dir: dir.path().to_path_buf(),
            total_steps: 4,
            ..cfg.clone()
        };
        train(half.clone(), false, |_| {}).unwrap();
        let rest = train(TrainConfig { total_steps: 8, ..half }, true, |_| {}).unwrap();
        assert_eq!(rest.records, full.records);
        let a = Checkpoint::load(&full.checkpoint).unwrap();
        let b = Checkpoint::load(&rest.checkpoint).unwrap();
        assert_eq!(a.stores, b.stores);
        assert_eq!(
            std::fs::read(&full.log).unwrap(),
            std::fs::read(&rest.log).unwrap()
        );
    }

    #[test]
    fn zero_steps_writes_initial_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            checkpoint_dir: dir.path().to_path_buf(),
            total_steps: 0,
            ..tiny(false)
        };
        let out = train(cfg, false, |_| {}).unwrap();
        assert_eq!(out.records.len(), 1);
        assert!(checkpoint_path(dir.path(), 0).exists());
        assert!(out.checkpoint.exists());
        let ck = Checkpoint::load(&out.checkpoint).unwrap();
        assert_eq!(ck.meta["step"], 0);
    }

    #[test]
    fn resume_rejects_other_config() {
        let t = Trainer::new(tiny(true)).unwrap();
        let ck = t.checkpoint();
        let other = TrainConfig {
            n_customers: 9,
            ..tiny(true)
        };
        assert!(matches!(Trainer::resume(other, &ck), Err(AgfnError::Checkpoint(_))));
        let longer = TrainConfig {
            total_steps: 100,
            ..tiny(true)
        };
        Trainer::resume(longer, &ck).unwrap();
    }
}
