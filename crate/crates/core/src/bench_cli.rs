//! The work behind each `agfn` subcommand, callable from code as well.
//!
//! Every command writes `manifest.json` into its output directory before it
//! starts and finalizes it afterwards. Output files other than the manifest
//! and the `timings.csv` files depend only on the manifest's config, so
//! rerunning a manifest reproduces them byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, ParameterStore};
use crate::baselines::{gap_pct, held_karp, nearest_neighbor, nearest_neighbor_two_opt, HELD_KARP_MAX_NODES};
use crate::decoder::{decode_batch, DecodeConfig, DecodeMode, Trajectory};
use crate::error::{AgfnError, Result};
use crate::instance::{generate, GenConfig, Instance, ProblemKind};
use crate::local_search::LsVariant;
use crate::policy_net::PolicyNet;
use crate::rng::{derive_seed, Stream};
use crate::sparse_graph::SparseGraph;
use crate::trainer::{self, TrainConfig, TrainLogRecord, GENERATOR_STORE};

/// Version string recorded in manifests. `AGFN_GIT_DESCRIBE` at build time
/// overrides the package version.
pub fn code_version() -> String {
    option_env!("AGFN_GIT_DESCRIBE")
        .map(str::to_string)
        .unwrap_or_else(|| format!("agfn-{}", env!("CARGO_PKG_VERSION")))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub code_version: String,
    pub seed: u64,
    pub started_at: f64,
    pub finished_at: Option<f64>,
    pub status: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    /// Creates the manifest and writes it with status "running".
    pub fn begin(dir: &Path, command: &str, config: &impl Serialize, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let m = RunManifest {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            code_version: code_version(),
            seed,
            started_at: unix_now(),
            finished_at: None,
            status: "running".into(),
            outputs: Vec::new(),
        };
        m.write(dir)?;
        Ok(m)
    }

    pub fn finish(mut self, dir: &Path, outputs: Vec<PathBuf>) -> Result<Self> {
        self.finished_at = Some(unix_now());
        self.status = "ok".into();
        self.outputs = outputs;
        self.write(dir)?;
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(Self::FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenDataArgs {
    pub kind: ProblemKind,
    pub n: usize,
    pub count: usize,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub file: String,
    pub seed: u64,
}

pub const INDEX_FILE: &str = "index.json";

/// Writes `count` random instances as `<name>.json` plus `index.json`.
pub fn gen_data(args: &GenDataArgs) -> Result<Vec<IndexEntry>> {
    if args.out.is_dir() && std::fs::read_dir(&args.out)?.next().is_some() && !args.force {
        return Err(AgfnError::Usage(format!(
            "{} exists and is not empty; pass --force to write into it",
            args.out.display()
        )));
    }
    let manifest = RunManifest::begin(&args.out, "gen-data", args, args.seed)?;
    let mut index = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let seed = derive_seed(args.seed, Stream::Data, i as u64, 0);
        let mut inst = generate(&GenConfig::standard(args.n, seed), args.kind)?;
        inst.name = format!("{}{}_{i:04}", args.kind, args.n);
        let file = format!("{}.json", inst.name);
        std::fs::write(args.out.join(&file), inst.to_json()?)?;
        index.push(IndexEntry {
            name: inst.name,
            file,
            seed,
        });
    }
    let index_path = args.out.join(INDEX_FILE);
    std::fs::write(&index_path, serde_json::to_vec_pretty(&index)?)?;
    manifest.finish(&args.out, vec![index_path])?;
    Ok(index)
}

/// Loads one instance file, or every instance of a directory: the files in
/// its `index.json` when present, otherwise all `.json`/`.tsp`/`.vrp` files
/// in name order.
pub fn load_instances(path: &Path) -> Result<Vec<Instance>> {
    if !path.is_dir() {
        return Ok(vec![Instance::load(path)?]);
    }
    let index = path.join(INDEX_FILE);
    let files: Vec<PathBuf> = if index.exists() {
        let entries: Vec<IndexEntry> = serde_json::from_slice(&std::fs::read(&index)?)?;
        entries.into_iter().map(|e| path.join(e.file)).collect()
    } else {
        let mut v: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
                matches!(ext.as_str(), "json" | "tsp" | "vrp") && p.file_name() != Some(RunManifest::FILE.as_ref())
            })
            .collect();
        v.sort();
        v
    };
    files.iter().map(|f| Instance::load(f)).collect()
}

// ---------------------------------------------------------------- train

/// Trains with `cfg`, writing the manifest into its checkpoint directory.
/// `progress` receives each eval record.
pub fn train(cfg: TrainConfig, resume: bool, progress: impl FnMut(&TrainLogRecord)) -> Result<trainer::TrainOutcome> {
    cfg.validate()?;
    let dir = cfg.checkpoint_dir.clone();
    let manifest = RunManifest::begin(&dir, "train", &cfg, cfg.seed)?;
    let out = trainer::train(cfg, resume, progress)?;
    manifest.finish(&dir, vec![out.checkpoint.clone(), out.log.clone()])?;
    Ok(out)
}

// ---------------------------------------------------------------- solve

/// A trained generator restored from a checkpoint.
pub struct LoadedModel {
    pub config: TrainConfig,
    pub policy: PolicyNet,
    pub store: ParameterStore,
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path).map_err(|e| match e {
            AgfnError::Io(io) => AgfnError::Checkpoint(format!("cannot read {}: {io}", path.display())),
            other => other,
        })?;
        let config: TrainConfig = serde_json::from_value(ck.meta["config"].clone())
            .map_err(|e| AgfnError::Checkpoint(format!("{}: no usable training config: {e}", path.display())))?;
        let policy = PolicyNet::new(
            config.policy.clone(),
            SparseGraph::node_width_for(config.problem),
            1,
        )?;
        let store = ck.store(GENERATOR_STORE)?.clone();
        policy.check_store(&store)?;
        Ok(LoadedModel { config, policy, store })
    }

    pub fn check_instance(&self, inst: &Instance) -> Result<()> {
        if inst.kind != self.config.problem {
            return Err(AgfnError::Checkpoint(format!(
                "model was trained on {} but instance '{}' is {}",
                self.config.problem, inst.name, inst.kind
            )));
        }
        Ok(())
    }

    /// Best of the decoded rollouts on one instance.
    pub fn solve(&self, inst: &Instance, cfg: &DecodeConfig) -> Result<Trajectory> {
        self.check_instance(inst)?;
        let g = SparseGraph::build(inst.clone())?;
        let heat = self.policy.heatmap(&self.store, &g)?;
        let r = decode_batch(&g, &heat, cfg)?;
        Ok(r.best().clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveArgs {
    pub checkpoint: PathBuf,
    pub instances: PathBuf,
    pub mode: DecodeMode,
    pub p: f64,
    pub n_rollouts: usize,
    pub seed: u64,
    pub temperature: f64,
    pub out: PathBuf,
}

impl SolveArgs {
    /// Hybrid decoding with P = 0.05 and N = 100.
    pub fn new(checkpoint: PathBuf, instances: PathBuf, out: PathBuf) -> Self {
        let d = DecodeConfig::test_time(0);
        SolveArgs {
            checkpoint,
            instances,
            mode: d.mode,
            p: d.hybrid_p,
            n_rollouts: d.n_rollouts,
            seed: 0,
            temperature: d.temperature,
            out,
        }
    }

    fn decode_config(&self, instance_idx: usize) -> DecodeConfig {
        DecodeConfig {
            mode: self.mode,
            hybrid_p: self.p,
            n_rollouts: self.n_rollouts,
            seed: derive_seed(self.seed, Stream::Decode, instance_idx as u64, 1),
            temperature: self.temperature,
        }
    }
}

/// Row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRow {
    pub instance: String,
    pub n_nodes: usize,
    pub obj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub instance: String,
    pub time_s: f64,
}

pub struct SolveOutcome {
    pub rows: Vec<SolveRow>,
    pub solutions: Vec<Trajectory>,
    pub mean_obj: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Decodes every instance and writes `summary.csv` (instance, n_nodes, obj),
/// `timings.csv` (instance, time_s) and `solutions/<name>.json` plus a
/// `.tour` file per instance.
pub fn solve(args: &SolveArgs) -> Result<SolveOutcome> {
    args.decode_config(0).validate()?;
    let model = LoadedModel::load(&args.checkpoint)?;
    let instances = load_instances(&args.instances)?;
    for inst in &instances {
        model.check_instance(inst)?;
    }
    let manifest = RunManifest::begin(&args.out, "solve", args, args.seed)?;
    let solved = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let t0 = Instant::now();
            let sol = model.solve(inst, &args.decode_config(i))?;
            Ok((sol, t0.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;

    let sol_dir = args.out.join("solutions");
    std::fs::create_dir_all(&sol_dir)?;
    let mut rows = Vec::with_capacity(solved.len());
    let mut timings = Vec::with_capacity(solved.len());
    for (inst, (sol, secs)) in instances.iter().zip(&solved) {
        std::fs::write(sol_dir.join(format!("{}.json", inst.name)), serde_json::to_vec_pretty(&sol.to_solution_json())?)?;
        std::fs::write(sol_dir.join(format!("{}.tour", inst.name)), sol.to_tour_file())?;
        rows.push(SolveRow {
            instance: inst.name.clone(),
            n_nodes: inst.n_nodes(),
            obj: sol.length,
        });
        timings.push(TimingRow {
            instance: inst.name.clone(),
            time_s: *secs,
        });
    }
    let summary = args.out.join("summary.csv");
    write_csv(&summary, &rows)?;
    write_csv(&args.out.join("timings.csv"), &timings)?;
    manifest.finish(&args.out, vec![summary, sol_dir])?;
    let mean_obj = mean(&rows.iter().map(|r| r.obj).collect::<Vec<_>>());
    Ok(SolveOutcome {
        rows,
        solutions: solved.into_iter().map(|(s, _)| s).collect(),
        mean_obj,
    })
}

// ---------------------------------------------------------------- sweep-p

/// Reference solver for the gap column of a P sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMethod {
    NearestNeighbor,
    NearestNeighborTwoOpt,
    HeldKarp,
}

impl std::str::FromStr for ReferenceMethod {
    type Err = AgfnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest_neighbor" | "nn" => Ok(ReferenceMethod::NearestNeighbor),
            "nearest_neighbor_two_opt" | "nn_two_opt" => Ok(ReferenceMethod::NearestNeighborTwoOpt),
            "held_karp" => Ok(ReferenceMethod::HeldKarp),
            other => Err(AgfnError::Config(format!("unknown reference method '{other}'"))),
        }
    }
}

impl ReferenceMethod {
    pub fn objective(self, inst: &Instance) -> Result<f64> {
        Ok(match self {
            ReferenceMethod::NearestNeighbor => nearest_neighbor(inst).length,
            ReferenceMethod::NearestNeighborTwoOpt => nearest_neighbor_two_opt(inst).length,
            ReferenceMethod::HeldKarp => held_karp(inst)?.length,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepArgs {
    pub checkpoint: PathBuf,
    pub instances: PathBuf,
    pub p_list: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_rollouts: usize,
    pub reference: ReferenceMethod,
    pub out: PathBuf,
}

/// The P grid of the published sweep.
pub const DEFAULT_P_GRID: [f64; 5] = [0.01, 0.03, 0.05, 0.07, 0.10];

/// Row of `sweep_p.csv`: objective averaged over instances and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub mean_obj: f64,
    pub gap_pct: f64,
}

/// Hybrid decoding for every P and seed. `sweep_p.csv` holds one row per P;
/// `sweep_p_seeds.csv` the per-seed means.
pub fn sweep_p(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    if args.p_list.is_empty() || args.seeds.is_empty() {
        return Err(AgfnError::Config("sweep needs at least one P and one seed".into()));
    }
    let model = LoadedModel::load(&args.checkpoint)?;
    let instances = load_instances(&args.instances)?;
    if instances.is_empty() {
        return Err(AgfnError::Config(format!("no instances in {}", args.instances.display())));
    }
    for inst in &instances {
        model.check_instance(inst)?;
        if args.reference == ReferenceMethod::HeldKarp && inst.n_nodes() > HELD_KARP_MAX_NODES {
            return Err(AgfnError::Config(format!(
                "held_karp reference needs at most {HELD_KARP_MAX_NODES} nodes, '{}' has {}",
                inst.name,
                inst.n_nodes()
            )));
        }
    }
    let manifest = RunManifest::begin(&args.out, "sweep-p", args, args.seeds[0])?;
    let reference = mean(
        &instances
            .par_iter()
            .map(|i| args.reference.objective(i))
            .collect::<Result<Vec<_>>>()?,
    );

    // heatmaps do not depend on P or the seed
    let prepared = instances
        .par_iter()
        .map(|inst| {
            let g = SparseGraph::build(inst.clone())?;
            let heat = model.policy.heatmap(&model.store, &g)?;
            Ok((g, heat))
        })
        .collect::<Result<Vec<_>>>()?;

    #[derive(Serialize)]
    struct SeedRow {
        p: f64,
        seed: u64,
        mean_obj: f64,
    }
    let mut rows = Vec::new();
    let mut seed_rows = Vec::new();
    for &p in &args.p_list {
        let mut per_seed = Vec::new();
        for &seed in &args.seeds {
            let objs = prepared
                .par_iter()
                .enumerate()
                .map(|(i, (g, heat))| {
                    let cfg = DecodeConfig {
                        mode: DecodeMode::Hybrid,
                        hybrid_p: p,
                        n_rollouts: args.n_rollouts,
                        seed: derive_seed(seed, Stream::Decode, i as u64, 1),
                        temperature: model.config.temperature,
                    };
                    Ok(decode_batch(g, heat, &cfg)?.best().length)
                })
                .collect::<Result<Vec<_>>>()?;
            let m = mean(&objs);
            seed_rows.push(SeedRow { p, seed, mean_obj: m });
            per_seed.push(m);
        }
        let m = mean(&per_seed);
        rows.push(SweepRow {
            p,
            mean_obj: m,
            gap_pct: gap_pct(m, reference)?,
        });
    }
    let table = args.out.join("sweep_p.csv");
    write_csv(&table, &rows)?;
    let detail = args.out.join("sweep_p_seeds.csv");
    write_csv(&detail, &seed_rows)?;
    manifest.finish(&args.out, vec![table, detail])?;
    Ok(rows)
}

// ---------------------------------------------------------------- ablate

/// Named training variants compared by `ablate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    AdversaryOn,
    AdversaryOff,
    LsDestroyRepair,
    LsTwoOpt,
}

impl std::str::FromStr for Variant {
    type Err = AgfnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adversary_on" => Ok(Variant::AdversaryOn),
            "adversary_off" => Ok(Variant::AdversaryOff),
            "ls_destroy_repair" => Ok(Variant::LsDestroyRepair),
            "ls_two_opt" => Ok(Variant::LsTwoOpt),
            other => Err(AgfnError::Config(format!("unknown ablation variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::AdversaryOn => "adversary_on",
            Variant::AdversaryOff => "adversary_off",
            Variant::LsDestroyRepair => "ls_destroy_repair",
            Variant::LsTwoOpt => "ls_two_opt",
        })
    }
}

impl Variant {
    /// `base` with this variant's switches applied. The local-search
    /// variants keep the adversary on.
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::AdversaryOn => c.adversary_enabled = true,
            Variant::AdversaryOff => c.adversary_enabled = false,
            Variant::LsDestroyRepair => {
                c.adversary_enabled = true;
                c.local_search.variant = LsVariant::DestroyRepair;
            }
            Variant::LsTwoOpt => {
                c.adversary_enabled = true;
                c.local_search.variant = LsVariant::TwoOpt;
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateArgs {
    pub config: TrainConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

/// Row of the ablation curves. `mean_obj` is the eval-set mean of the
/// best-of-N sampled objective, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub variant: String,
    pub mean_obj: f64,
}

pub struct AblateOutcome {
    /// One curve per requested variant, in request order.
    pub curves: Vec<Vec<CurveRow>>,
    pub curve_files: Vec<PathBuf>,
    pub merged: PathBuf,
}

/// Trains every variant for every seed under `out/runs/`, then writes one
/// curve file per variant (`out/curves/<i>_<variant>.csv`) and the merged
/// `out/ablation.csv`.
pub fn ablate(args: &AblateArgs, mut progress: impl FnMut(&str, u64, &TrainLogRecord)) -> Result<AblateOutcome> {
    if args.variants.is_empty() || args.seeds.is_empty() {
        return Err(AgfnError::Config("ablation needs at least one variant and one seed".into()));
    }
    for v in &args.variants {
        v.apply(&args.config).validate()?;
    }
    let manifest = RunManifest::begin(&args.out, "ablate", args, args.seeds[0])?;
    let curve_dir = args.out.join("curves");
    std::fs::create_dir_all(&curve_dir)?;
    let mut curves = Vec::new();
    let mut curve_files = Vec::new();
    for (vi, v) in args.variants.iter().enumerate() {
        let label = v.to_string();
        let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for &seed in &args.seeds {
            let cfg = TrainConfig {
                seed,
                checkpoint_dir: args.out.join("runs").join(format!("{vi}_{label}")).join(format!("seed{seed}")),
                ..v.apply(&args.config)
            };
            let out = trainer::train(cfg, false, |r| progress(&label, seed, r))?;
            for r in out.records {
                by_step.entry(r.step).or_default().push(r.eval_best_len);
            }
        }
        let rows: Vec<CurveRow> = by_step
            .into_iter()
            .map(|(step, v)| CurveRow {
                step,
                variant: label.clone(),
                mean_obj: mean(&v),
            })
            .collect();
        let path = curve_dir.join(format!("{vi}_{label}.csv"));
        write_csv(&path, &rows)?;
        curve_files.push(path);
        curves.push(rows);
    }
    let merged = args.out.join("ablation.csv");
    let mut all: Vec<CurveRow> = curves.iter().flatten().cloned().collect();
    all.sort_by_key(|r| r.step);
    write_csv(&merged, &all)?;
    let mut outputs = curve_files.clone();
    outputs.push(merged.clone());
    manifest.finish(&args.out, outputs)?;
    Ok(AblateOutcome {
        curves,
        curve_files,
        merged,
    })
}
