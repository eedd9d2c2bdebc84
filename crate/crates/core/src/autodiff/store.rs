//! Named trainable parameters, Adam state, and the binary checkpoint
//! container.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{AgfnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Trainable tensors keyed by name plus non-trainable buffers (batch-norm
/// running statistics). Iteration order is the sorted name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: BTreeMap<String, Param>,
    buffers: BTreeMap<String, Vec<f64>>,
    pub step: u64,
}

/// Tape handles for every parameter of a store, created by
/// [`ParameterStore::bind`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| AgfnError::Checkpoint(format!("parameter '{name}' is not registered")))
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(AgfnError::Config(format!("duplicate parameter '{name}'")));
        }
        let n = tensor.numel();
        self.params.insert(
            name,
            Param {
                tensor: tensor.with_grad(),
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        );
        Ok(())
    }

    /// Registers a `[rows, cols]` tensor drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn register_uniform(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.register(name, Tensor::new(shape, data)?)
    }

    pub fn register_buffer(&mut self, name: impl Into<String>, data: Vec<f64>) {
        self.buffers.insert(name.into(), data);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.tensor)
    }

    pub fn buffer(&self, name: &str) -> Option<&[f64]> {
        self.buffers.get(name).map(|b| b.as_slice())
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.buffers.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn n_scalars(&self) -> usize {
        self.params.values().map(|p| p.tensor.numel()).sum()
    }

    /// Puts every parameter on `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), tape.param(Tensor { grad: None, ..p.tensor.clone() })))
            .collect();
        Bound { vars }
    }

    /// Puts every parameter on `tape` as a constant (no gradient tracking).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, p)| (k.clone(), tape.constant(p.tensor.clone())))
            .collect();
        Bound { vars }
    }

    /// Adds `scale * dL/dparam` into each parameter's gradient buffer.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients, scale: f64) {
        for (name, p) in self.params.iter_mut() {
            let Some(&v) = bound.vars.get(name) else { continue };
            let g = grads.get(v);
            let buf = p.tensor.grad.get_or_insert_with(|| vec![0.0; g.len()]);
            for (b, gi) in buf.iter_mut().zip(g.iter()) {
                *b += scale * gi;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            if let Some(g) = p.tensor.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn grad(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).and_then(|p| p.tensor.grad.as_deref())
    }

    pub fn grads_finite(&self) -> bool {
        self.params
            .values()
            .all(|p| p.tensor.grad.as_ref().map_or(true, |g| g.iter().all(|x| x.is_finite())))
    }

    /// FNV-1a over names and raw parameter bits; used to detect which store a
    /// training phase touched.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        };
        for (k, p) in &self.params {
            eat(k.as_bytes());
            for x in &p.tensor.data {
                eat(&x.to_le_bytes());
            }
        }
        for (k, b) in &self.buffers {
            eat(k.as_bytes());
            for x in b {
                eat(&x.to_le_bytes());
            }
        }
        h
    }
}

/// One Adam update with bias correction, then zeroes the gradients.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) {
    store.step += 1;
    let t = store.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for p in store.params.values_mut() {
        let Some(g) = p.tensor.grad.as_mut() else { continue };
        for i in 0..g.len() {
            let gi = g[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * gi;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = p.m[i] / bc1;
            let vhat = p.v[i] / bc2;
            p.tensor.data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            g[i] = 0.0;
        }
    }
}

const MAGIC: &[u8; 8] = b"AGFNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned container holding several named stores plus a JSON metadata
/// blob.
///
/// Layout (all integers little-endian):
///
/// ```text
/// magic "AGFNCKPT" | u32 version | u32 meta_len | meta (UTF-8 JSON)
/// u32 n_stores
///   per store: u32 name_len | name | u64 step | u32 n_params | u32 n_buffers
///     per param:  u32 name_len | name | u32 ndim | u64 dims.. | f64 data.. | f64 m.. | f64 v..
///     per buffer: u32 name_len | name | u64 len | f64 data..
/// ```
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub stores: BTreeMap<String, ParameterStore>,
}

fn w_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn w_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
fn w_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}
fn w_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(AgfnError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| AgfnError::Checkpoint("non-UTF-8 name".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        self.write_to(&mut w).expect("writing to a Vec cannot fail");
        w
    }

    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w_u32(w, CHECKPOINT_VERSION)?;
        let meta = serde_json::to_vec(&self.meta).map_err(std::io::Error::other)?;
        w_u32(w, meta.len() as u32)?;
        w.write_all(&meta)?;
        w_u32(w, self.stores.len() as u32)?;
        for (name, store) in &self.stores {
            w_str(w, name)?;
            w_u64(w, store.step)?;
            w_u32(w, store.params.len() as u32)?;
            w_u32(w, store.buffers.len() as u32)?;
            for (pname, p) in &store.params {
                w_str(w, pname)?;
                w_u32(w, p.tensor.shape.len() as u32)?;
                for &d in &p.tensor.shape {
                    w_u64(w, d as u64)?;
                }
                w_f64s(w, &p.tensor.data)?;
                w_f64s(w, &p.m)?;
                w_f64s(w, &p.v)?;
            }
            for (bname, b) in &store.buffers {
                w_str(w, bname)?;
                w_u64(w, b.len() as u64)?;
                w_f64s(w, b)?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(AgfnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(AgfnError::Checkpoint(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?)?;
        let n_stores = r.u32()?;
        let mut stores = BTreeMap::new();
        for _ in 0..n_stores {
            let name = r.string()?;
            let mut store = ParameterStore {
                step: r.u64()?,
                ..Default::default()
            };
            let n_params = r.u32()?;
            let n_buffers = r.u32()?;
            for _ in 0..n_params {
                let pname = r.string()?;
                let ndim = r.u32()? as usize;
                let shape = (0..ndim)
                    .map(|_| r.u64().map(|d| d as usize))
                    .collect::<Result<Vec<_>>>()?;
                let numel: usize = shape.iter().product();
                let data = r.f64s(numel)?;
                let m = r.f64s(numel)?;
                let v = r.f64s(numel)?;
                let tensor = Tensor::new(shape, data)?.with_grad();
                store.params.insert(pname, Param { tensor, m, v });
            }
            for _ in 0..n_buffers {
                let bname = r.string()?;
                let len = r.u64()? as usize;
                store.buffers.insert(bname, r.f64s(len)?);
            }
            stores.insert(name, store);
        }
        if r.pos != data.len() {
            return Err(AgfnError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { meta, stores })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn store(&self, name: &str) -> Result<&ParameterStore> {
        self.stores
            .get(name)
            .ok_or_else(|| AgfnError::Checkpoint(format!("no store named '{name}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};

    fn scalar_store(w: f64) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.register("w", Tensor::new(vec![1], vec![w]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(1.0);
        adam_step(&mut s, &AdamConfig::default());
        assert_eq!(s.get("w").unwrap().data[0], 1.0);
    }

    #[test]
    fn positive_gradient_decreases() {
        let mut s = scalar_store(1.0);
        s.params.get_mut("w").unwrap().tensor.grad = Some(vec![1.0]);
        adam_step(
            &mut s,
            &AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
        );
        let w = s.get("w").unwrap().data[0];
        assert!(w < 1.0);
        // first bias-corrected step moves by ~lr
        assert!((w - 0.9).abs() < 1e-6);
        assert_eq!(s.grad("w").unwrap(), &[0.0]);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = scalar_store(0.3);
        let mut b = scalar_store(0.3);
        for g in [0.5, -0.2, 1.5] {
            a.params.get_mut("w").unwrap().tensor.grad = Some(vec![g]);
            b.params.get_mut("w").unwrap().tensor.grad = Some(vec![g]);
            adam_step(&mut a, &AdamConfig::default());
            adam_step(&mut b, &AdamConfig::default());
        }
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = scalar_store(1.0);
        assert!(s.register("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = substream(3, Stream::Init, 0, 0);
        let mut s = ParameterStore::new();
        s.register_uniform("a.W", vec![3, 4], 4, &mut rng).unwrap();
        s.register_uniform("a.b", vec![3], 4, &mut rng).unwrap();
        s.register_buffer("bn.mean", vec![0.1, -0.2]);
        s.params.get_mut("a.b").unwrap().tensor.grad = Some(vec![0.3, 0.1, -1.0]);
        adam_step(&mut s, &AdamConfig::default());
        let mut ck = Checkpoint::default();
        ck.meta = serde_json::json!({"step": 1});
        ck.stores.insert("generator".into(), s.clone());
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.store("generator").unwrap().fingerprint(), s.fingerprint());
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope").is_err());
        let mut bytes = Checkpoint::default().to_bytes();
        bytes[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(AgfnError::Checkpoint(_))));
    }
}
