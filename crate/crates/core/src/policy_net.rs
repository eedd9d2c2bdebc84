//! Generator network: input projections, gated GNN layers and an MLP head
//! that scores every sparse edge, plus the log-partition head.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, ParameterStore, Tape, Tensor, Var};
use crate::error::{AgfnError, Result};
use crate::gnn::{BnUpdate, GnnEncoder, GraphBatch, Mlp, Mode};
use crate::rng::{substream, Stream};
use crate::sparse_graph::SparseGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LogZMode {
    /// Small MLP on mean-pooled final node embeddings.
    #[default]
    Conditional,
    /// One learned scalar shared by every instance.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyNetConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub mlp_hidden: Vec<usize>,
    pub logz_hidden: Vec<usize>,
    pub logz_mode: LogZMode,
    pub seed: u64,
}

impl Default for PolicyNetConfig {
    fn default() -> Self {
        PolicyNetConfig {
            hidden_dim: 32,
            n_layers: 3,
            mlp_hidden: vec![32, 16],
            logz_hidden: vec![16],
            logz_mode: LogZMode::Conditional,
            seed: 0,
        }
    }
}

impl PolicyNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(AgfnError::Config("hidden_dim must be at least 1".into()));
        }
        if self.n_layers == 0 {
            return Err(AgfnError::Config("n_layers must be at least 1".into()));
        }
        if self.mlp_hidden.contains(&0) || self.logz_hidden.contains(&0) {
            return Err(AgfnError::Config("MLP widths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-edge selection scores in (0, 1), aligned with [`SparseGraph::edges`].
/// `log_scores` holds `log(score)` computed without going through `score`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub scores: Vec<f64>,
    pub log_scores: Vec<f64>,
}

impl Heatmap {
    /// Every edge gets the same score.
    pub fn uniform(n_edges: usize, score: f64) -> Self {
        Heatmap {
            scores: vec![score; n_edges],
            log_scores: vec![score.ln(); n_edges],
        }
    }

    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|&&s| !(s > 0.0 && s <= 1.0)) {
            return Err(AgfnError::Domain(format!("heatmap score {bad} outside (0, 1]")));
        }
        let log_scores = scores.iter().map(|s| s.ln()).collect();
        Ok(Heatmap { scores, log_scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `[[src, dst, score], ...]` for debugging.
    pub fn to_json(&self, g: &SparseGraph) -> serde_json::Value {
        serde_json::Value::Array(
            g.edges
                .iter()
                .zip(&self.scores)
                .map(|(&(s, d), &v)| serde_json::json!([s, d, v]))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyNet {
    pub cfg: PolicyNetConfig,
    pub encoder: GnnEncoder,
    pub head: Mlp,
    pub logz: Mlp,
}

/// Tape handles from one forward pass.
pub struct PolicyOutput {
    /// `[E, 1]` pre-sigmoid edge scores.
    pub logits: Var,
    /// `[E, 1]` log heatmap.
    pub log_heat: Var,
    /// Scalar log-partition estimate.
    pub log_z: Var,
    pub bn_updates: Vec<BnUpdate>,
}

/// Tape handles from a batched forward pass.
pub struct BatchOutput {
    pub logits: Var,
    pub log_heat: Var,
    /// One log Z per graph.
    pub log_z: Var,
    pub edge_offsets: Vec<usize>,
    pub bn_updates: Vec<BnUpdate>,
}

impl PolicyNet {
    pub fn new(cfg: PolicyNetConfig, node_feat_width: usize, edge_feat_width: usize) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.hidden_dim;
        Ok(PolicyNet {
            encoder: GnnEncoder {
                node_in: node_feat_width,
                edge_in: edge_feat_width,
                hidden: d,
                layers: cfg.n_layers,
            },
            head: Mlp::new("head", 3 * d, &cfg.mlp_hidden, 1),
            logz: Mlp::new("logz", d, &cfg.logz_hidden, 1),
            cfg,
        })
    }

    /// Registers every parameter with seeded uniform initialization.
    pub fn init(&self) -> Result<ParameterStore> {
        let mut rng = substream(self.cfg.seed, Stream::Init, 0, 0);
        let mut store = ParameterStore::new();
        self.encoder.register(&mut store, &mut rng)?;
        self.head.register(&mut store, &mut rng)?;
        match self.cfg.logz_mode {
            LogZMode::Conditional => self.logz.register(&mut store, &mut rng)?,
            LogZMode::Shared => store.register("logz.scalar", Tensor::new(vec![1], vec![0.0])?)?,
        }
        Ok(store)
    }

    /// Checks that `store` carries this architecture's parameter shapes.
    pub fn check_store(&self, store: &ParameterStore) -> Result<()> {
        let reference = self.init()?;
        for (name, p) in reference.params() {
            match store.get(name) {
                Some(t) if t.shape == p.tensor.shape => {}
                Some(t) => {
                    return Err(AgfnError::Checkpoint(format!(
                        "parameter '{name}' has shape {:?}, architecture needs {:?}",
                        t.shape, p.tensor.shape
                    )))
                }
                None => {
                    return Err(AgfnError::Checkpoint(format!(
                        "parameter '{name}' missing from checkpoint"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Forward pass over the disjoint union of `graphs`. `log_heat` rows of
    /// graph `b` are `edge_offsets[b]..edge_offsets[b + 1]`; `log_z` has one
    /// entry per graph. Batch-norm statistics span the whole batch in
    /// training mode.
    pub fn forward_batch_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        store: &ParameterStore,
        graphs: &[&SparseGraph],
        mode: Mode,
    ) -> Result<BatchOutput> {
        if graphs.is_empty() {
            return Err(AgfnError::Usage("forward pass over an empty batch".into()));
        }
        let mut batch = GraphBatch::new(graphs[0].node_feat_width, graphs[0].edge_feat_width);
        for g in graphs {
            batch.push(&g.gnn_input())?;
        }
        let mut bn_updates = Vec::new();
        let enc = self.encoder.encode(tape, bound, store, &batch.input(), mode, &mut bn_updates)?;
        let h_i = tape.gather(enc.h, &batch.src)?;
        let h_j = tape.gather(enc.h, &batch.dst)?;
        let x = tape.concat(&[enc.e, h_i, h_j])?;
        let logits = self.head.forward(tape, bound, x)?;
        let log_heat = tape.log_sigmoid(logits);
        let log_z = match self.cfg.logz_mode {
            LogZMode::Conditional => {
                let pooled = tape.mean_aggregate(enc.h, &batch.node_offsets)?;
                self.logz.forward(tape, bound, pooled)?
            }
            LogZMode::Shared => {
                let s = bound.get("logz.scalar")?;
                tape.gather(s, &vec![0; graphs.len()])?
            }
        };
        Ok(BatchOutput {
            logits,
            log_heat,
            log_z,
            edge_offsets: batch.edge_offsets,
            bn_updates,
        })
    }

    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        store: &ParameterStore,
        g: &SparseGraph,
        mode: Mode,
    ) -> Result<PolicyOutput> {
        let out = self.forward_batch_on_tape(tape, bound, store, &[g], mode)?;
        let log_z = tape.sum_reduce(out.log_z);
        Ok(PolicyOutput {
            logits: out.logits,
            log_heat: out.log_heat,
            log_z,
            bn_updates: out.bn_updates,
        })
    }

    /// Heatmap and log Z without gradient tracking. Inference mode leaves the
    /// store untouched.
    pub fn forward(&self, store: &ParameterStore, g: &SparseGraph, mode: Mode) -> Result<(Heatmap, f64, Vec<BnUpdate>)> {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let out = self.forward_on_tape(&mut tape, &bound, store, g, mode)?;
        let heat = heatmap_from(&tape, out.logits, out.log_heat);
        Ok((heat, tape.scalar(out.log_z), out.bn_updates))
    }

    pub fn heatmap(&self, store: &ParameterStore, g: &SparseGraph) -> Result<Heatmap> {
        Ok(self.forward(store, g, Mode::Infer)?.0)
    }
}

pub fn heatmap_from(tape: &Tape, logits: Var, log_heat: Var) -> Heatmap {
    heatmap_slice(tape, logits, log_heat, 0..tape.value(logits).data.len())
}

/// Heatmap for a row range of batched logits.
pub fn heatmap_slice(tape: &Tape, logits: Var, log_heat: Var, rows: std::ops::Range<usize>) -> Heatmap {
    let scores = tape.value(logits).data[rows.clone()]
        .iter()
        .map(|&x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
        .collect();
    Heatmap {
        scores,
        log_scores: tape.value(log_heat).data[rows].to_vec(),
    }
}
