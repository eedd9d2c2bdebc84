//! Reverse-mode tape over [`Tensor`] values.
//!
//! Every primitive appends one node holding its output value and the indices
//! of its inputs. Because inputs are always recorded before outputs, walking
//! the node list backwards is a valid reverse topological order.

use super::tensor::Tensor;
use crate::error::{AgfnError, Result};

pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Silu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    BatchNormTrain { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNormInfer { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    MeanAggregate { x: Var, offsets: Vec<usize> },
    Hadamard(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    MulScalar(Var, f64),
    AddScalar(Var),
    Log(Var),
    Square(Var),
    Gather { x: Var, idx: Vec<usize> },
    MeanRows(Var),
    MeanAll(Var),
    SumAll(Var),
    Concat(Vec<Var>),
    SegmentLogSumExp { x: Var, offsets: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// How [`Tape::batch_norm`] normalizes.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a> {
    /// Batch statistics over all rows.
    Train,
    /// Frozen running statistics.
    Infer { mean: &'a [f64], var: &'a [f64] },
}

/// Per-feature batch statistics from a training-mode batch norm; `var` is the
/// unbiased estimate used for running-statistic updates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients from one backward pass, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> std::borrow::Cow<'_, [f64]> {
        match &self.grads[v.0] {
            Some(g) => std::borrow::Cow::Borrowed(g),
            None => std::borrow::Cow::Owned(vec![0.0; self.shapes[v.0]]),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    // log σ(x) = -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn check_offsets(op: &'static str, offsets: &[usize], rows: usize) -> Result<()> {
    if offsets.first() != Some(&0) || offsets.last() != Some(&rows) {
        return Err(AgfnError::shape(op, format!("offsets must span 0..{rows}")));
    }
    if offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(AgfnError::shape(op, "offsets must be non-decreasing"));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf. Its gradient is tracked when `t.requires_grad` is set.
    pub fn leaf(&mut self, mut t: Tensor) -> Var {
        let needs = t.requires_grad;
        t.grad = None;
        self.push(t, Op::Leaf, needs)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        t.grad = None;
        self.push(t, Op::Leaf, false)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        let mut t = t;
        t.requires_grad = true;
        self.leaf(t)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let xv = &self.nodes[x.0].value;
        let data = xv.data.iter().map(|&a| f(a)).collect();
        let value = Tensor {
            shape: xv.shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        let needs = self.ng(x);
        self.push(value, op, needs)
    }

    /// `x W^T + b` with `x: [r, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
        let (r, cin) = (xv.rows(), xv.cols());
        if wv.shape.len() != 2 || wv.shape[1] != cin {
            return Err(AgfnError::shape(
                "linear",
                format!("input [{r}, {cin}] vs weight {:?}", wv.shape),
            ));
        }
        let cout = wv.shape[0];
        let bias = match b {
            Some(b) => {
                let bv = &self.nodes[b.0].value;
                if bv.numel() != cout {
                    return Err(AgfnError::shape(
                        "linear",
                        format!("bias has {} entries, need {cout}", bv.numel()),
                    ));
                }
                Some(bv.data.as_slice())
            }
            None => None,
        };
        let mut out = vec![0.0; r * cout];
        for i in 0..r {
            let xr = &xv.data[i * cin..(i + 1) * cin];
            let orow = &mut out[i * cout..(i + 1) * cout];
            for (o, slot) in orow.iter_mut().enumerate() {
                let wr = &wv.data[o * cin..(o + 1) * cin];
                let mut acc = bias.map_or(0.0, |bb| bb[o]);
                for (a, c) in xr.iter().zip(wr) {
                    acc += a * c;
                }
                *slot = acc;
            }
        }
        let needs = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        let value = Tensor::matrix(r, cout, out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, needs))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a * sigmoid(a), Op::Silu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Numerically stable `log(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, log_sigmoid, Op::LogSigmoid(x))
    }

    /// Per-column normalization of `x: [r, c]`, then `gamma * xhat + beta`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xv = &self.nodes[x.0].value;
        let (r, c) = (xv.rows(), xv.cols());
        let (gv, bv) = (&self.nodes[gamma.0].value, &self.nodes[beta.0].value);
        if gv.numel() != c || bv.numel() != c {
            return Err(AgfnError::shape(
                "batch_norm",
                format!("{c} features but gamma/beta have {}/{}", gv.numel(), bv.numel()),
            ));
        }
        if r == 0 {
            return Err(AgfnError::shape("batch_norm", "empty batch"));
        }
        let (mean, var_biased, stats) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        mean[j] += xv.data[i * c + j];
                    }
                }
                mean.iter_mut().for_each(|m| *m /= r as f64);
                let mut var = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        let d = xv.data[i * c + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                let unbiased: Vec<f64> = if r > 1 {
                    var.iter().map(|v| v / (r - 1) as f64).collect()
                } else {
                    vec![0.0; c]
                };
                var.iter_mut().for_each(|v| *v /= r as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BnMode::Infer { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(AgfnError::shape("batch_norm", "running statistics width"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var_biased.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                let h = (xv.data[i * c + j] - mean[j]) * inv_std[j];
                xhat[i * c + j] = h;
                out[i * c + j] = gv.data[j] * h + bv.data[j];
            }
        }
        let needs = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let value = Tensor::matrix(r, c, out)?;
        let op = match mode {
            BnMode::Train => Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            BnMode::Infer { .. } => Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        };
        Ok((self.push(value, op, needs), stats))
    }

    /// Mean of the rows of `x` within each segment
    /// `offsets[s]..offsets[s + 1]`; empty segments give zeros.
    pub fn mean_aggregate(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (r, c) = (xv.rows(), xv.cols());
        check_offsets("mean_aggregate", offsets, r)?;
        let segs = offsets.len() - 1;
        let mut out = vec![0.0; segs * c];
        for s in 0..segs {
            let (a, b) = (offsets[s], offsets[s + 1]);
            if a == b {
                continue;
            }
            let inv = 1.0 / (b - a) as f64;
            let orow = &mut out[s * c..(s + 1) * c];
            for i in a..b {
                for (o, v) in orow.iter_mut().zip(&xv.data[i * c..(i + 1) * c]) {
                    *o += v;
                }
            }
            orow.iter_mut().for_each(|o| *o *= inv);
        }
        let needs = self.ng(x);
        let value = Tensor::matrix(segs, c, out)?;
        Ok(self.push(
            value,
            Op::MeanAggregate {
                x,
                offsets: offsets.to_vec(),
            },
            needs,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.numel() != bv.numel() || av.rows() != bv.rows() {
            return Err(AgfnError::shape(
                op,
                format!("{:?} vs {:?}", av.shape, bv.shape),
            ));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            shape: av.shape.clone(),
            data,
            requires_grad: false,
            grad: None,
        };
        let needs = self.ng(a) || self.ng(b);
        self.push(value, op, needs)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        Ok(self.binary(a, b, |x, y| x * y, Op::Hadamard(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.binary(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.binary(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::MulScalar(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    /// Elementwise natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[a.0].value.data.iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(AgfnError::Domain(format!("log of non-positive value {bad}")));
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Selects rows of `x` (entries, for a column) by index.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (r, c) = (xv.rows(), xv.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(AgfnError::shape("gather", format!("row {bad} out of {r}")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&xv.data[i * c..(i + 1) * c]);
        }
        let shape = if xv.shape.len() <= 1 {
            vec![idx.len()]
        } else {
            vec![idx.len(), c]
        };
        let needs = self.ng(x);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    /// Column means: `[r, c] -> [1, c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (r, c) = (xv.rows(), xv.cols());
        if r == 0 {
            return Err(AgfnError::shape("mean_rows", "no rows"));
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(&xv.data[i * c..(i + 1) * c]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        let needs = self.ng(x);
        let value = Tensor::matrix(1, c, out)?;
        Ok(self.push(value, Op::MeanRows(x), needs))
    }

    /// Mean over all entries, as a scalar.
    pub fn mean_reduce(&mut self, x: Var) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.numel() == 0 {
            return Err(AgfnError::shape("mean_reduce", "empty tensor"));
        }
        let m = xv.data.iter().sum::<f64>() / xv.numel() as f64;
        let needs = self.ng(x);
        Ok(self.push(Tensor::scalar(m), Op::MeanAll(x), needs))
    }

    pub fn sum_reduce(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum::<f64>();
        let needs = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), needs)
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(AgfnError::shape("concat", "no inputs"));
        };
        let r = self.nodes[first.0].value.rows();
        let widths: Vec<usize> = xs.iter().map(|v| self.nodes[v.0].value.cols()).collect();
        if xs.iter().any(|v| self.nodes[v.0].value.rows() != r) {
            return Err(AgfnError::shape("concat", "row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (v, &w) in xs.iter().zip(&widths) {
            let d = &self.nodes[v.0].value.data;
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&d[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let needs = xs.iter().any(|&v| self.ng(v));
        let value = Tensor::matrix(r, total, out)?;
        Ok(self.push(value, Op::Concat(xs.to_vec()), needs))
    }

    /// `log(sum(exp(x)))` of a column over each segment; empty segments are an
    /// error.
    pub fn segment_logsumexp(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if xv.cols() != 1 {
            return Err(AgfnError::shape("segment_logsumexp", "input must be a column"));
        }
        check_offsets("segment_logsumexp", offsets, xv.rows())?;
        let mut out = Vec::with_capacity(offsets.len() - 1);
        for w in offsets.windows(2) {
            let seg = &xv.data[w[0]..w[1]];
            if seg.is_empty() {
                return Err(AgfnError::shape("segment_logsumexp", "empty segment"));
            }
            let m = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = seg.iter().map(|v| (v - m).exp()).sum();
            out.push(m + s.ln());
        }
        let needs = self.ng(x);
        Ok(self.push(
            Tensor::column(out),
            Op::SegmentLogSumExp {
                x,
                offsets: offsets.to_vec(),
            },
            needs,
        ))
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(AgfnError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape
            )));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.propagate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.numel()).collect(),
        })
    }

    fn propagate(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot =
                grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (r, cin, cout) = (xv.rows(), xv.cols(), wv.shape[0]);
                acc(*x, &mut |g| {
                    for i in 0..r {
                        let gr = &gy[i * cout..(i + 1) * cout];
                        let gx = &mut g[i * cin..(i + 1) * cin];
                        for (o, &go) in gr.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            for (gxi, wi) in gx.iter_mut().zip(&wv.data[o * cin..(o + 1) * cin]) {
                                *gxi += go * wi;
                            }
                        }
                    }
                });
                acc(*w, &mut |g| {
                    for i in 0..r {
                        let xr = &xv.data[i * cin..(i + 1) * cin];
                        for o in 0..cout {
                            let go = gy[i * cout + o];
                            if go == 0.0 {
                                continue;
                            }
                            for (gw, xi) in g[o * cin..(o + 1) * cin].iter_mut().zip(xr) {
                                *gw += go * xi;
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |g| {
                        for i in 0..r {
                            for (gb, go) in g.iter_mut().zip(&gy[i * cout..(i + 1) * cout]) {
                                *gb += go;
                            }
                        }
                    });
                }
            }
            Op::Silu(x) => {
                let xv = val(*x);
                acc(*x, &mut |g| {
                    for ((gi, &a), &go) in g.iter_mut().zip(&xv.data).zip(gy) {
                        let s = sigmoid(a);
                        *gi += go * s * (1.0 + a * (1.0 - s));
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value.data;
                acc(*x, &mut |g| {
                    for ((gi, &s), &go) in g.iter_mut().zip(y).zip(gy) {
                        *gi += go * s * (1.0 - s);
                    }
                });
            }
            Op::LogSigmoid(x) => {
                let xv = val(*x);
                acc(*x, &mut |g| {
                    for ((gi, &a), &go) in g.iter_mut().zip(&xv.data).zip(gy) {
                        *gi += go * sigmoid(-a);
                    }
                });
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let xv = val(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let gv = val(*gamma);
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        sum_g[j] += gy[i * c + j];
                        sum_gx[j] += gy[i * c + j] * xhat[i * c + j];
                    }
                }
                acc(*gamma, &mut |g| {
                    for j in 0..c {
                        g[j] += sum_gx[j];
                    }
                });
                acc(*beta, &mut |g| {
                    for j in 0..c {
                        g[j] += sum_g[j];
                    }
                });
                let rf = r as f64;
                acc(*x, &mut |g| {
                    for i in 0..r {
                        for j in 0..c {
                            let k = i * c + j;
                            g[k] += gv.data[j] * inv_std[j] / rf
                                * (rf * gy[k] - sum_g[j] - xhat[k] * sum_gx[j]);
                        }
                    }
                });
            }
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let xv = val(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let gv = val(*gamma);
                acc(*gamma, &mut |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[j] += gy[i * c + j] * xhat[i * c + j];
                        }
                    }
                });
                acc(*beta, &mut |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[j] += gy[i * c + j];
                        }
                    }
                });
                acc(*x, &mut |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += gy[i * c + j] * gv.data[j] * inv_std[j];
                        }
                    }
                });
            }
            Op::MeanAggregate { x, offsets } => {
                let c = val(*x).cols();
                acc(*x, &mut |g| {
                    for (s, w) in offsets.windows(2).enumerate() {
                        if w[0] == w[1] {
                            continue;
                        }
                        let inv = 1.0 / (w[1] - w[0]) as f64;
                        let gs = &gy[s * c..(s + 1) * c];
                        for i in w[0]..w[1] {
                            for (gi, go) in g[i * c..(i + 1) * c].iter_mut().zip(gs) {
                                *gi += go * inv;
                            }
                        }
                    }
                });
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for ((gi, go), bb) in g.iter_mut().zip(gy).zip(&bv.data) {
                        *gi += go * bb;
                    }
                });
                acc(*b, &mut |g| {
                    for ((gi, go), aa) in g.iter_mut().zip(gy).zip(&av.data) {
                        *gi += go * aa;
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(gi, go)| *gi += go));
                acc(*b, &mut |g| g.iter_mut().zip(gy).for_each(|(gi, go)| *gi += go));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(gi, go)| *gi += go));
                acc(*b, &mut |g| g.iter_mut().zip(gy).for_each(|(gi, go)| *gi -= go));
            }
            Op::MulScalar(a, s) => {
                acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(gi, go)| *gi += go * s));
            }
            Op::AddScalar(a) => {
                acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(gi, go)| *gi += go));
            }
            Op::Log(a) => {
                let av = val(*a);
                acc(*a, &mut |g| {
                    for ((gi, go), x) in g.iter_mut().zip(gy).zip(&av.data) {
                        *gi += go / x;
                    }
                });
            }
            Op::Square(a) => {
                let av = val(*a);
                acc(*a, &mut |g| {
                    for ((gi, go), x) in g.iter_mut().zip(gy).zip(&av.data) {
                        *gi += 2.0 * go * x;
                    }
                });
            }
            Op::Gather { x, idx } => {
                let c = val(*x).cols();
                acc(*x, &mut |g| {
                    for (k, &i) in idx.iter().enumerate() {
                        for (gi, go) in g[i * c..(i + 1) * c].iter_mut().zip(&gy[k * c..(k + 1) * c]) {
                            *gi += go;
                        }
                    }
                });
            }
            Op::MeanRows(x) => {
                let xv = val(*x);
                let (r, c) = (xv.rows(), xv.cols());
                let inv = 1.0 / r as f64;
                acc(*x, &mut |g| {
                    for i in 0..r {
                        for (gi, go) in g[i * c..(i + 1) * c].iter_mut().zip(gy) {
                            *gi += go * inv;
                        }
                    }
                });
            }
            Op::MeanAll(x) => {
                let n = val(*x).numel() as f64;
                acc(*x, &mut |g| g.iter_mut().for_each(|gi| *gi += gy[0] / n));
            }
            Op::SumAll(x) => {
                acc(*x, &mut |g| g.iter_mut().for_each(|gi| *gi += gy[0]));
            }
            Op::Concat(xs) => {
                let total = node.value.cols();
                let r = node.value.rows();
                let mut off = 0;
                for &v in xs {
                    let w = val(v).cols();
                    acc(v, &mut |g| {
                        for i in 0..r {
                            for (gi, go) in g[i * w..(i + 1) * w]
                                .iter_mut()
                                .zip(&gy[i * total + off..i * total + off + w])
                            {
                                *gi += go;
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::SegmentLogSumExp { x, offsets } => {
                let xv = val(*x);
                let out = &node.value.data;
                acc(*x, &mut |g| {
                    for (s, w) in offsets.windows(2).enumerate() {
                        for i in w[0]..w[1] {
                            g[i] += gy[s] * (xv.data[i] - out[s]).exp();
                        }
                    }
                });
            }
        }
    }
}
