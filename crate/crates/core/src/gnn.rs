//! Anisotropic gated GNN layers and MLP heads shared by the generator and the
//! discriminator.
//!
//! One layer updates node embeddings `h` and edge embeddings `e` as
//!
//! ```text
//! h_i  <- h_i  + SiLU(BN(U h_i + mean_{j in N(i)} sigmoid(e_ij) * V h_j))
//! e_ij <- e_ij + SiLU(BN(P e_ij + Q h_i + R h_j))
//! ```
//!
//! where `N(i)` is the sparse out-neighbourhood of `i`, and both updates read
//! the embeddings from before the layer.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{BatchStats, BnMode, Bound, ParameterStore, Tape, Tensor, Var};
use crate::error::{AgfnError, Result};

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Raw inputs for one graph.
#[derive(Debug, Clone, Copy)]
pub struct GraphInput<'a> {
    pub n_nodes: usize,
    pub node_feat: &'a [f64],
    pub node_width: usize,
    pub edge_feat: &'a [f64],
    pub edge_width: usize,
    pub src: &'a [usize],
    pub dst: &'a [usize],
    pub offsets: &'a [usize],
}

/// Disjoint union of several graphs. Node and edge rows of graph `b` occupy
/// `node_offsets[b]..node_offsets[b + 1]` and `edge_offsets[b]..edge_offsets[b + 1]`.
#[derive(Debug, Clone, Default)]
pub struct GraphBatch {
    pub node_feat: Vec<f64>,
    pub node_width: usize,
    pub edge_feat: Vec<f64>,
    pub edge_width: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub offsets: Vec<usize>,
    pub node_offsets: Vec<usize>,
    pub edge_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn new(node_width: usize, edge_width: usize) -> Self {
        GraphBatch {
            node_width,
            edge_width,
            offsets: vec![0],
            node_offsets: vec![0],
            edge_offsets: vec![0],
            ..Default::default()
        }
    }

    pub fn n_graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        *self.node_offsets.last().unwrap()
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    /// Appends one graph given in CSR form with local node ids.
    pub fn push(&mut self, g: &GraphInput<'_>) -> Result<()> {
        if g.node_width != self.node_width || g.edge_width != self.edge_width {
            return Err(AgfnError::shape(
                "graph batch",
                format!(
                    "feature widths {}/{} do not match batch widths {}/{}",
                    g.node_width, g.edge_width, self.node_width, self.edge_width
                ),
            ));
        }
        let n0 = self.n_nodes();
        let e0 = self.n_edges();
        self.node_feat.extend_from_slice(g.node_feat);
        self.edge_feat.extend_from_slice(g.edge_feat);
        self.src.extend(g.src.iter().map(|&v| v + n0));
        self.dst.extend(g.dst.iter().map(|&v| v + n0));
        self.offsets.extend(g.offsets[1..].iter().map(|&o| o + e0));
        self.node_offsets.push(n0 + g.n_nodes);
        self.edge_offsets.push(e0 + g.src.len());
        Ok(())
    }

    pub fn input(&self) -> GraphInput<'_> {
        GraphInput {
            n_nodes: self.n_nodes(),
            node_feat: &self.node_feat,
            node_width: self.node_width,
            edge_feat: &self.edge_feat,
            edge_width: self.edge_width,
            src: &self.src,
            dst: &self.dst,
            offsets: &self.offsets,
        }
    }
}

/// Running-statistic update produced by a training-mode forward pass; apply
/// with [`apply_bn_updates`].
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub prefix: String,
    pub stats: BatchStats,
}

pub fn apply_bn_updates(store: &mut ParameterStore, updates: &[BnUpdate]) {
    for u in updates {
        if let Some(m) = store.buffer_mut(&format!("{}.running_mean", u.prefix)) {
            for (r, b) in m.iter_mut().zip(&u.stats.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
        if let Some(v) = store.buffer_mut(&format!("{}.running_var", u.prefix)) {
            for (r, b) in v.iter_mut().zip(&u.stats.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
    }
}

fn register_bn(store: &mut ParameterStore, prefix: &str, width: usize) -> Result<()> {
    store.register(format!("{prefix}.gamma"), Tensor::column(vec![1.0; width]))?;
    store.register(format!("{prefix}.beta"), Tensor::column(vec![0.0; width]))?;
    store.register_buffer(format!("{prefix}.running_mean"), vec![0.0; width]);
    store.register_buffer(format!("{prefix}.running_var"), vec![1.0; width]);
    Ok(())
}

fn bn(
    tape: &mut Tape,
    bound: &Bound,
    store: &ParameterStore,
    prefix: &str,
    x: Var,
    mode: Mode,
    updates: &mut Vec<BnUpdate>,
) -> Result<Var> {
    let gamma = bound.get(&format!("{prefix}.gamma"))?;
    let beta = bound.get(&format!("{prefix}.beta"))?;
    match mode {
        Mode::Train => {
            let (y, stats) = tape.batch_norm(x, gamma, beta, BnMode::Train)?;
            if let Some(stats) = stats {
                updates.push(BnUpdate {
                    prefix: prefix.to_string(),
                    stats,
                });
            }
            Ok(y)
        }
        Mode::Infer => {
            let missing = || AgfnError::Checkpoint(format!("missing running stats for {prefix}"));
            let mean = store
                .buffer(&format!("{prefix}.running_mean"))
                .ok_or_else(missing)?;
            let var = store
                .buffer(&format!("{prefix}.running_var"))
                .ok_or_else(missing)?;
            Ok(tape.batch_norm(x, gamma, beta, BnMode::Infer { mean, var })?.0)
        }
    }
}

/// Fully connected stack: SiLU between layers, raw output at the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub prefix: String,
    pub widths: Vec<usize>,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        Mlp {
            prefix: prefix.into(),
            widths,
        }
    }

    pub fn register(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<()> {
        for (i, w) in self.widths.windows(2).enumerate() {
            store.register_uniform(format!("{}.{i}.W", self.prefix), vec![w[1], w[0]], w[0], rng)?;
            store.register_uniform(format!("{}.{i}.b", self.prefix), vec![w[1]], w[0], rng)?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let n = self.widths.len() - 1;
        let mut h = x;
        for i in 0..n {
            let w = bound.get(&format!("{}.{i}.W", self.prefix))?;
            let b = bound.get(&format!("{}.{i}.b", self.prefix))?;
            h = tape.linear(h, w, Some(b))?;
            if i + 1 < n {
                h = tape.silu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnnEncoder {
    pub node_in: usize,
    pub edge_in: usize,
    pub hidden: usize,
    pub layers: usize,
}

pub struct Encoded {
    pub h: Var,
    pub e: Var,
}

impl GnnEncoder {
    pub fn register(&self, store: &mut ParameterStore, rng: &mut ChaCha8Rng) -> Result<()> {
        let d = self.hidden;
        store.register_uniform("node_in.W", vec![d, self.node_in], self.node_in, rng)?;
        store.register_uniform("node_in.b", vec![d], self.node_in, rng)?;
        store.register_uniform("edge_in.W", vec![d, self.edge_in], self.edge_in, rng)?;
        store.register_uniform("edge_in.b", vec![d], self.edge_in, rng)?;
        for l in 0..self.layers {
            for m in ["U", "V", "P", "Q", "R"] {
                store.register_uniform(format!("layer{l}.{m}"), vec![d, d], d, rng)?;
            }
            register_bn(store, &format!("layer{l}.bn_h"), d)?;
            register_bn(store, &format!("layer{l}.bn_e"), d)?;
        }
        Ok(())
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        store: &ParameterStore,
        g: &GraphInput<'_>,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<Encoded> {
        if g.node_width != self.node_in || g.edge_width != self.edge_in {
            return Err(AgfnError::shape(
                "gnn",
                format!(
                    "network expects node/edge widths {}/{}, graph has {}/{}",
                    self.node_in, self.edge_in, g.node_width, g.edge_width
                ),
            ));
        }
        let n_edges = g.src.len();
        let x_n = tape.constant(Tensor::matrix(g.n_nodes, g.node_width, g.node_feat.to_vec())?);
        let x_e = tape.constant(Tensor::matrix(n_edges, g.edge_width, g.edge_feat.to_vec())?);
        let mut h = tape.linear(x_n, bound.get("node_in.W")?, Some(bound.get("node_in.b")?))?;
        let mut e = tape.linear(x_e, bound.get("edge_in.W")?, Some(bound.get("edge_in.b")?))?;
        for l in 0..self.layers {
            let p = |m: &str| bound.get(&format!("layer{l}.{m}"));
            let uh = tape.linear(h, p("U")?, None)?;
            let vh = tape.linear(h, p("V")?, None)?;
            let vh_j = tape.gather(vh, g.dst)?;
            let gate = tape.sigmoid(e);
            let msg = tape.hadamard(gate, vh_j)?;
            let agg = tape.mean_aggregate(msg, g.offsets)?;
            let pre_h = tape.add(uh, agg)?;
            let nh = bn(tape, bound, store, &format!("layer{l}.bn_h"), pre_h, mode, updates)?;
            let nh = tape.silu(nh);

            let pe = tape.linear(e, p("P")?, None)?;
            let qh = tape.linear(h, p("Q")?, None)?;
            let rh = tape.linear(h, p("R")?, None)?;
            let qh_i = tape.gather(qh, g.src)?;
            let rh_j = tape.gather(rh, g.dst)?;
            let pre_e = tape.add(pe, qh_i)?;
            let pre_e = tape.add(pre_e, rh_j)?;
            let ne = bn(tape, bound, store, &format!("layer{l}.bn_e"), pre_e, mode, updates)?;
            let ne = tape.silu(ne);

            h = tape.add(h, nh)?;
            e = tape.add(e, ne)?;
        }
        Ok(Encoded { h, e })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    #[test]
    fn zero_weights_pass_through() {
        let enc = GnnEncoder {
            node_in: 2,
            edge_in: 1,
            hidden: 3,
            layers: 2,
        };
        let mut store = ParameterStore::new();
        enc.register(&mut store, &mut substream(1, Stream::Init, 0, 0)).unwrap();
        for l in 0..2 {
            for m in ["U", "V", "P", "Q", "R"] {
                let t = store.get_mut(&format!("layer{l}.{m}")).unwrap();
                t.data.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let node = [0.1, 0.2, 0.5, 0.9, 0.3, 0.3];
        let edge = [0.4, 0.5, 0.6];
        let input = GraphInput {
            n_nodes: 3,
            node_feat: &node,
            node_width: 2,
            edge_feat: &edge,
            edge_width: 1,
            src: &[0, 1, 2],
            dst: &[1, 2, 0],
            offsets: &[0, 1, 2, 3],
        };
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let mut up = Vec::new();
        let out = enc.encode(&mut tape, &bound, &store, &input, Mode::Train, &mut up).unwrap();
        // h after the layers equals the input projection
        let mut t2 = Tape::new();
        let b2 = store.bind(&mut t2);
        let x = t2.constant(Tensor::matrix(3, 2, node.to_vec()).unwrap());
        let h0 = t2
            .linear(x, b2.get("node_in.W").unwrap(), Some(b2.get("node_in.b").unwrap()))
            .unwrap();
        assert_eq!(tape.value(out.h).data, t2.value(h0).data);
        assert_eq!(up.len(), 4);
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut store = ParameterStore::new();
        register_bn(&mut store, "bn", 2).unwrap();
        apply_bn_updates(
            &mut store,
            &[BnUpdate {
                prefix: "bn".into(),
                stats: BatchStats {
                    mean: vec![1.0, -1.0],
                    var: vec![3.0, 1.0],
                },
            }],
        );
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(store.buffer("bn.running_mean").unwrap(), &[0.1, -0.1]));
        assert!(close(store.buffer("bn.running_var").unwrap(), &[1.2, 1.0]));
    }
}
