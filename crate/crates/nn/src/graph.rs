//! Eager tape: every op computes its output immediately and records what
//! backward needs.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        dilation: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu {
        x: Var,
    },
    Dropout {
        x: Var,
        scale: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<f64>,
    },
    SoftmaxTime {
        x: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    SubTime {
        x: Var,
        m: Var,
    },
    SumTime {
        x: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    GatherTime {
        x: Var,
        idx: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    SumAll {
        x: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// A single forward/backward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    training: bool,
}

impl<T: Scalar> Graph<T> {
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            training,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is tracked.
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn ensure_finite(&self, v: Var, what: &str) -> Result<()> {
        if self.value(v).is_finite() {
            Ok(())
        } else {
            Err(NnError::NonFinite(format!("{what} contains NaN or infinity")))
        }
    }

    /// Valid cross-correlation over the last axis of `x: [B, Cin, T]` with
    /// `w: [Cout, Cin, K]` and optional bias `[Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, dilation: usize) -> Result<Var> {
        let (bsz, cin, t) = self.value(x).bct()?;
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 3 || ws[1] != cin {
            return Err(NnError::Shape(format!(
                "conv weight {ws:?} does not match input channels {cin}"
            )));
        }
        let (cout, k) = (ws[0], ws[2]);
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(NnError::Shape(format!("conv bias must be [{cout}]")));
            }
        }
        if stride == 0 || dilation == 0 {
            return Err(NnError::Shape("stride and dilation must be positive".into()));
        }
        let span = dilation * (k - 1) + 1;
        if t < span {
            return Err(NnError::TooShort { needed: span, got: t });
        }
        let t_out = (t - span) / stride + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bias = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); bsz * cout * t_out];
        out.par_chunks_mut(cout * t_out).enumerate().for_each(|(bi, ob)| {
            let cols = im2col(&xv[bi * cin * t..(bi + 1) * cin * t], cin, t, k, stride, dilation, t_out);
            if let Some(bias) = bias {
                for (co, row) in ob.chunks_mut(t_out).enumerate() {
                    row.fill(bias[co]);
                }
            }
            let beta = if bias.is_some() { T::one() } else { T::zero() };
            T::gemm(cout, cin * k, t_out, T::one(), wv, false, &cols, false, beta, ob);
        });
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(&[bsz, cout, t_out], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                dilation,
            },
            rg,
        ))
    }

    /// `y = x W^T + b` for `x: [B, In]`, `w: [Out, In]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(NnError::Shape(format!("dense input {xs:?} vs weight {ws:?}")));
        }
        let (bsz, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); bsz * dout];
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != dout {
                return Err(NnError::Shape(format!("dense bias must be [{dout}]")));
            }
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        T::gemm(bsz, din, dout, T::one(), self.value(x).data(), false, self.value(w).data(), true, beta, &mut out);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::new(&[bsz, dout], out)?, Op::Dense { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(value, Op::Relu { x }, rg)
    }

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::Shape(format!("dropout probability {p} not in [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let scale: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let src = self.value(x);
        let data: Vec<T> = src.data().iter().zip(&scale).map(|(&v, &s)| v * s).collect();
        let value = Tensor::new(src.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout { x, scale }, rg))
    }

    /// Normalizes across axis 1 (channels) at every batch/time position,
    /// then applies per-channel scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (bsz, c, t) = self.value(x).bct()?;
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(NnError::Shape(format!("layer norm affine parameters must be [{c}]")));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = vec![0.0f64; bsz * t];
        for b in 0..bsz {
            for ti in 0..t {
                let at = |ch: usize| b * c * t + ch * t + ti;
                let mean = (0..c).map(|ch| xv[at(ch)].to_f64_lossy()).sum::<f64>() / c as f64;
                let var = (0..c)
                    .map(|ch| {
                        let d = xv[at(ch)].to_f64_lossy() - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / c as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[b * t + ti] = is;
                for ch in 0..c {
                    let h = T::of((xv[at(ch)].to_f64_lossy() - mean) * is);
                    xhat[at(ch)] = h;
                    out[at(ch)] = g[ch] * h + be[ch];
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Softmax along the last (time) axis of `[B, C, T]`. With `lengths`,
    /// steps at or beyond `lengths[b]` are masked out (weight exactly zero).
    pub fn softmax_time(&mut self, x: Var, lengths: Option<&[usize]>) -> Result<Var> {
        let (bsz, c, t) = self.value(x).bct()?;
        if let Some(l) = lengths {
            if l.len() != bsz || l.iter().any(|&n| n == 0 || n > t) {
                return Err(NnError::Shape(format!(
                    "lengths {l:?} invalid for batch {bsz} with {t} steps"
                )));
            }
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..bsz {
            let valid = lengths.map_or(t, |l| l[b]);
            for ch in 0..c {
                let base = (b * c + ch) * t;
                let row = &xv[base..base + valid];
                let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossy()));
                let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (o, e) in out[base..base + valid].iter_mut().zip(&exps) {
                    *o = T::of(e / z);
                }
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::SoftmaxTime { x }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NnError::Shape(format!("mul {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    /// `x[b, c, t] - m[b, c]`.
    pub fn sub_time(&mut self, x: Var, m: Var) -> Result<Var> {
        let (bsz, c, t) = self.value(x).bct()?;
        if self.value(m).shape() != [bsz, c] {
            return Err(NnError::Shape(format!(
                "broadcast operand must be [{bsz}, {c}], got {:?}",
                self.value(m).shape()
            )));
        }
        let mv = self.value(m).data();
        let data: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v - mv[i / t])
            .collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x) || self.rg(m);
        Ok(self.push(Tensor::new(&shape, data)?, Op::SubTime { x, m }, rg))
    }

    /// Sum over the last axis: `[B, C, T] -> [B, C]`.
    pub fn sum_time(&mut self, x: Var) -> Result<Var> {
        let (bsz, c, t) = self.value(x).bct()?;
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks(t)
            .map(|row| T::of(row.iter().map(|v| v.to_f64_lossy()).sum::<f64>()))
            .collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[bsz, c], data)?, Op::SumTime { x }, rg))
    }

    /// Concatenates along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| NnError::Shape("nothing to concatenate".into()))?)
            .shape()
            .to_vec();
        let (bsz, t) = (first[0], if first.len() == 3 { first[2] } else { 1 });
        let mut total_c = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len() || s[0] != bsz || (s.len() == 3 && s[2] != t) {
                return Err(NnError::Shape(format!("cannot concatenate {first:?} with {s:?}")));
            }
            total_c += s[1];
        }
        let mut data = Vec::with_capacity(bsz * total_c * t);
        for b in 0..bsz {
            for &p in parts {
                let v = self.value(p);
                let c = v.shape()[1];
                data.extend_from_slice(&v.data()[b * c * t..(b + 1) * c * t]);
            }
        }
        let mut shape = first.clone();
        shape[1] = total_c;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&shape, data)?, Op::Concat { parts: parts.to_vec() }, rg))
    }

    /// `y[b, c, j] = x[b, c, idx[j]]`.
    pub fn gather_time(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (bsz, c, t) = self.value(x).bct()?;
        if idx.iter().any(|&i| i >= t) {
            return Err(NnError::Shape(format!("time index out of range for {t} steps")));
        }
        let xv = self.value(x).data();
        let n = idx.len();
        let mut data = Vec::with_capacity(bsz * c * n);
        for row in xv.chunks(t) {
            data.extend(idx.iter().map(|&i| row[i]));
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(&[bsz, c, n], data)?,
            Op::GatherTime { x, idx: idx.to_vec() },
            rg,
        ))
    }

    /// Batch-mean of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.value(logits).shape().to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(NnError::Shape(format!("logits {s:?} vs {} labels", labels.len())));
        }
        let k = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(NnError::Label { label: bad, classes: k });
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for (b, &label) in labels.iter().enumerate() {
            let row = &lv[b * k..(b + 1) * k];
            let m = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64_lossy()));
            let z: f64 = row.iter().map(|v| (v.to_f64_lossy() - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - row[label].to_f64_lossy();
            for j in 0..k {
                probs[b * k + j] = (row[j].to_f64_lossy() - lse).exp();
            }
        }
        loss /= labels.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(T::of(loss)),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v.to_f64_lossy()).sum::<f64>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(T::of(s)), Op::SumAll { x }, rg)
    }

    /// Reverse pass from a scalar. Fails on non-finite gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(NnError::Shape("backward needs a scalar".into()));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            let contributions = self.op_backward(i, &op, &gy)?;
            self.nodes[i].op = op;
            self.nodes[i].grad = Some(gy);
            for (v, g) in contributions {
                if !self.rg(v) {
                    continue;
                }
                match &mut self.nodes[v.0].grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        for n in &self.nodes {
            if let Some(g) = &n.grad {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(NnError::NonFinite("gradient contains NaN or infinity".into()));
                }
            }
        }
        Ok(())
    }

    fn op_backward(&self, i: usize, op: &Op<T>, gy: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let y = &self.nodes[i].value;
        let mut out = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Conv1d {
                x,
                w,
                b,
                stride,
                dilation,
            } => {
                let (bsz, cin, t) = self.value(*x).bct()?;
                let ws = self.value(*w).shape();
                let (cout, k) = (ws[0], ws[2]);
                let t_out = y.shape()[2];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let need_x = self.rg(*x);
                let need_w = self.rg(*w);
                let per_item: Vec<(Vec<T>, Vec<T>)> = (0..bsz)
                    .into_par_iter()
                    .map(|bi| {
                        let gyb = &gy[bi * cout * t_out..(bi + 1) * cout * t_out];
                        let mut dw = Vec::new();
                        if need_w {
                            let cols = im2col(&xv[bi * cin * t..(bi + 1) * cin * t], cin, t, k, *stride, *dilation, t_out);
                            dw = vec![T::zero(); cout * cin * k];
                            T::gemm(cout, t_out, cin * k, T::one(), gyb, false, &cols, true, T::zero(), &mut dw);
                        }
                        let mut dx = Vec::new();
                        if need_x {
                            let mut dcols = vec![T::zero(); cin * k * t_out];
                            T::gemm(cin * k, cout, t_out, T::one(), wv, true, gyb, false, T::zero(), &mut dcols);
                            dx = col2im(&dcols, cin, t, k, *stride, *dilation, t_out);
                        }
                        (dw, dx)
                    })
                    .collect();
                if need_w {
                    let mut dw = vec![T::zero(); cout * cin * k];
                    for (d, _) in &per_item {
                        dw.iter_mut().zip(d).for_each(|(a, b)| *a += *b);
                    }
                    out.push((*w, dw));
                }
                if need_x {
                    let dx: Vec<T> = per_item.into_iter().flat_map(|(_, d)| d).collect();
                    out.push((*x, dx));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0f64; cout];
                    for (row_idx, row) in gy.chunks(t_out).enumerate() {
                        db[row_idx % cout] += row.iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                    }
                    out.push((*b, db.into_iter().map(T::of).collect()));
                }
            }
            Op::Dense { x, w, b } => {
                let xs = self.value(*x).shape();
                let (bsz, din) = (xs[0], xs[1]);
                let dout = self.value(*w).shape()[0];
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); bsz * din];
                    T::gemm(bsz, dout, din, T::one(), gy, false, self.value(*w).data(), false, T::zero(), &mut dx);
                    out.push((*x, dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); dout * din];
                    T::gemm(dout, bsz, din, T::one(), gy, true, self.value(*x).data(), false, T::zero(), &mut dw);
                    out.push((*w, dw));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0f64; dout];
                    for row in gy.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(a, v)| *a += v.to_f64_lossy());
                    }
                    out.push((*b, db.into_iter().map(T::of).collect()));
                }
            }
            Op::Relu { x } => {
                let dx = y
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                out.push((*x, dx));
            }
            Op::Dropout { x, scale } => {
                out.push((*x, gy.iter().zip(scale).map(|(&g, &s)| g * s).collect()));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (bsz, c, t) = self.value(*x).bct()?;
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                let mut dx = vec![T::zero(); gy.len()];
                for b in 0..bsz {
                    for ti in 0..t {
                        let at = |ch: usize| b * c * t + ch * t + ti;
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for ch in 0..c {
                            let gyv = gy[at(ch)].to_f64_lossy();
                            let xh = xhat[at(ch)].to_f64_lossy();
                            dgamma[ch] += gyv * xh;
                            dbeta[ch] += gyv;
                            let d = gyv * g[ch].to_f64_lossy();
                            sum_d += d;
                            sum_dx += d * xh;
                        }
                        let is = inv_std[b * t + ti];
                        let cf = c as f64;
                        for ch in 0..c {
                            let d = gy[at(ch)].to_f64_lossy() * g[ch].to_f64_lossy();
                            let xh = xhat[at(ch)].to_f64_lossy();
                            dx[at(ch)] = T::of(is / cf * (cf * d - sum_d - xh * sum_dx));
                        }
                    }
                }
                out.push((*x, dx));
                out.push((*gamma, dgamma.into_iter().map(T::of).collect()));
                out.push((*beta, dbeta.into_iter().map(T::of).collect()));
            }
            Op::SoftmaxTime { x } => {
                let (_, _, t) = y.bct()?;
                let mut dx = vec![T::zero(); gy.len()];
                for ((yr, gr), dr) in y.data().chunks(t).zip(gy.chunks(t)).zip(dx.chunks_mut(t)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy()).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = T::of(yv.to_f64_lossy() * (gv.to_f64_lossy() - dot));
                    }
                }
                out.push((*x, dx));
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                out.push((*a, gy.iter().zip(bv).map(|(&g, &v)| g * v).collect()));
                out.push((*b, gy.iter().zip(av).map(|(&g, &v)| g * v).collect()));
            }
            Op::SubTime { x, m } => {
                let (_, _, t) = self.value(*x).bct()?;
                out.push((*x, gy.to_vec()));
                let dm = gy
                    .chunks(t)
                    .map(|row| T::of(-row.iter().map(|v| v.to_f64_lossy()).sum::<f64>()))
                    .collect();
                out.push((*m, dm));
            }
            Op::SumTime { x } => {
                let (_, _, t) = self.value(*x).bct()?;
                let dx = gy.iter().flat_map(|&g| std::iter::repeat_n(g, t)).collect();
                out.push((*x, dx));
            }
            Op::Concat { parts } => {
                let s = y.shape();
                let (bsz, total_c) = (s[0], s[1]);
                let t = if s.len() == 3 { s[2] } else { 1 };
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    let mut dp = Vec::with_capacity(bsz * c * t);
                    for b in 0..bsz {
                        let start = (b * total_c + offset) * t;
                        dp.extend_from_slice(&gy[start..start + c * t]);
                    }
                    offset += c;
                    out.push((p, dp));
                }
            }
            Op::GatherTime { x, idx } => {
                let (_, _, t) = self.value(*x).bct()?;
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (row, grow) in dx.chunks_mut(t).zip(gy.chunks(idx.len())) {
                    for (&i, &g) in idx.iter().zip(grow) {
                        row[i] += g;
                    }
                }
                out.push((*x, dx));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let k = self.value(*logits).shape()[1];
                let scale = gy[0].to_f64_lossy() / labels.len() as f64;
                let mut d: Vec<T> = probs.iter().map(|&p| T::of(p * scale)).collect();
                for (b, &l) in labels.iter().enumerate() {
                    d[b * k + l] -= T::of(scale);
                }
                out.push((*logits, d));
            }
            Op::SumAll { x } => {
                out.push((*x, vec![gy[0]; self.value(*x).len()]));
            }
        }
        Ok(out)
    }

    /// Adds gradients of parameter leaves into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for n in &self.nodes {
            if let (Some(id), Some(g)) = (n.param, &n.grad) {
                store.add_grad(id, g);
            }
        }
    }
}

/// `cols[(ci*k + kk) * t_out + t] = x[ci, t*stride + kk*dilation]`.
fn im2col<T: Scalar>(x: &[T], cin: usize, t: usize, k: usize, stride: usize, dilation: usize, t_out: usize) -> Vec<T> {
    let mut cols = vec![T::zero(); cin * k * t_out];
    for ci in 0..cin {
        let row = &x[ci * t..(ci + 1) * t];
        for kk in 0..k {
            let dst = &mut cols[(ci * k + kk) * t_out..(ci * k + kk + 1) * t_out];
            let off = kk * dilation;
            if stride == 1 {
                dst.copy_from_slice(&row[off..off + t_out]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = row[j * stride + off];
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], cin: usize, t: usize, k: usize, stride: usize, dilation: usize, t_out: usize) -> Vec<T> {
    let mut x = vec![T::zero(); cin * t];
    for ci in 0..cin {
        let row = &mut x[ci * t..(ci + 1) * t];
        for kk in 0..k {
            let src = &cols[(ci * k + kk) * t_out..(ci * k + kk + 1) * t_out];
            let off = kk * dilation;
            for (j, &v) in src.iter().enumerate() {
                row[j * stride + off] += v;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        // keep away from zero so ReLU kinks don't straddle the difference step
        let data = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(0.1..1.0);
                if rng.random::<bool>() { v } else { -v }
            })
            .collect();
        Tensor::new(shape, data).unwrap()
    }

    /// Compares tape gradients of `sum(f(inputs) * probe)` to central differences.
    fn gradcheck(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let eval = |ins: &[Tensor<f64>], probe: Option<&Tensor<f64>>| {
            let mut g = Graph::new(false);
            let vars: Vec<Var> = ins.iter().map(|t| g.input_with_grad(t.clone())).collect();
            let y = f(&mut g, &vars);
            let p = match probe {
                Some(p) => p.clone(),
                None => Tensor::filled(g.value(y).shape(), 0.0),
            };
            let pv = g.input(p);
            let prod = g.mul(y, pv).unwrap();
            let loss = g.sum_all(prod);
            (g, vars, loss, y)
        };
        let (g0, _, _, y0) = eval(&inputs, None);
        let probe = random(g0.value(y0).shape(), &mut rng);
        let (mut g, vars, loss, _) = eval(&inputs, Some(&probe));
        g.backward(loss).unwrap();
        let h = 1e-4;
        for (k, v) in vars.iter().enumerate() {
            let analytic = g.grad(*v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
            for i in 0..inputs[k].len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let (gp, _, lp, _) = eval(&plus, Some(&probe));
                let (gm, _, lm, _) = eval(&minus, Some(&probe));
                let numeric = (gp.value(lp).data()[0] - gm.value(lm).data()[0]) / (2.0 * h);
                let a = analytic[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
                assert!(rel < 1e-3, "input {k}[{i}]: analytic {a} vs numeric {numeric}");
            }
        }
    }

    #[test]
    fn conv_hand_example() {
        let mut g = Graph::<f64>::new(false);
        let x = g.input(Tensor::new(&[1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.input(Tensor::new(&[1, 1, 2], vec![1.0, 1.0]).unwrap());
        let y = g.conv1d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::<f32>::new(false);
        let x = g.input(Tensor::new(&[1, 1, 5], vec![0.5, -1.0, 2.0, 3.0, 7.0]).unwrap());
        let w = g.input(Tensor::new(&[1, 1, 1], vec![1.0]).unwrap());
        let y = g.conv1d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn conv_stride_output_length() {
        let mut g = Graph::<f64>::new(false);
        let x = g.input(Tensor::zeros(&[1, 1, 5]));
        let w = g.input(Tensor::zeros(&[1, 1, 3]));
        let y = g.conv1d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 2]);
    }

    #[test]
    fn conv_rejects_short_input_and_channel_mismatch() {
        let mut g = Graph::<f64>::new(false);
        let x = g.input(Tensor::zeros(&[1, 2, 4]));
        let w = g.input(Tensor::zeros(&[1, 2, 3]));
        assert!(matches!(g.conv1d(x, w, None, 1, 2), Err(NnError::TooShort { needed: 5, got: 4 })));
        let w3 = g.input(Tensor::zeros(&[1, 3, 1]));
        assert!(matches!(g.conv1d(x, w3, None, 1, 1), Err(NnError::Shape(_))));
    }

    #[test]
    fn conv_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (b, cin, cout, t, k, s, d) = (2, 3, 4, 23, 3, 2, 3);
        let x = random(&[b, cin, t], &mut rng).cast::<f32>();
        let w = random(&[cout, cin, k], &mut rng).cast::<f32>();
        let bias = random(&[cout], &mut rng).cast::<f32>();
        let mut g = Graph::<f32>::new(false);
        let (xv, wv, bv) = (g.input(x.clone()), g.input(w.clone()), g.input(bias.clone()));
        let y = g.conv1d(xv, wv, Some(bv), s, d).unwrap();
        let t_out = (t - d * (k - 1) - 1) / s + 1;
        assert_eq!(g.value(y).shape(), &[b, cout, t_out]);
        for bi in 0..b {
            for co in 0..cout {
                for to in 0..t_out {
                    let mut acc = bias.data()[co] as f64;
                    for ci in 0..cin {
                        for kk in 0..k {
                            acc += w.data()[(co * cin + ci) * k + kk] as f64
                                * x.data()[(bi * cin + ci) * t + to * s + kk * d] as f64;
                        }
                    }
                    let got = g.value(y).data()[(bi * cout + co) * t_out + to] as f64;
                    assert!((got - acc).abs() < 1e-5, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn grad_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ins = vec![random(&[2, 3, 11], &mut rng), random(&[2, 3, 3], &mut rng), random(&[2], &mut rng)];
        gradcheck(ins, |g, v| g.conv1d(v[0], v[1], Some(v[2]), 2, 2).unwrap());
    }

    #[test]
    fn grad_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ins = vec![random(&[3, 4], &mut rng), random(&[5, 4], &mut rng), random(&[5], &mut rng)];
        gradcheck(ins, |g, v| g.dense(v[0], v[1], Some(v[2])).unwrap());
    }

    #[test]
    fn grad_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        gradcheck(vec![random(&[2, 3, 4], &mut rng)], |g, v| g.relu(v[0]));
    }

    #[test]
    fn grad_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ins = vec![random(&[2, 5, 3], &mut rng), random(&[5], &mut rng), random(&[5], &mut rng)];
        gradcheck(ins, |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap());
    }

    #[test]
    fn grad_softmax_time_masked() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        gradcheck(vec![random(&[2, 3, 5], &mut rng)], |g, v| g.softmax_time(v[0], Some(&[5, 3])).unwrap());
    }

    #[test]
    fn grad_broadcast_and_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ins = vec![random(&[2, 3, 4], &mut rng), random(&[2, 3], &mut rng)];
        gradcheck(ins, |g, v| {
            let d = g.sub_time(v[0], v[1]).unwrap();
            let sq = g.mul(d, d).unwrap();
            g.sum_time(sq).unwrap()
        });
    }

    #[test]
    fn grad_concat_and_gather() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ins = vec![random(&[2, 2, 4], &mut rng), random(&[2, 3, 4], &mut rng)];
        gradcheck(ins, |g, v| {
            let c = g.concat(&[v[0], v[1]]).unwrap();
            g.gather_time(c, &[0, 0, 3, 1, 3]).unwrap()
        });
    }

    #[test]
    fn grad_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        gradcheck(vec![random(&[3, 6], &mut rng)], |g, v| g.cross_entropy(v[0], &[0, 5, 2]).unwrap());
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut g = Graph::<f64>::new(false);
        let x = g.input_with_grad(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap());
        let loss = g.cross_entropy(x, &[2, 0]).unwrap();
        g.backward(loss).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let expected = [
            1f64.exp() / z / 2.0,
            2f64.exp() / z / 2.0,
            (3f64.exp() / z - 1.0) / 2.0,
            (1.0 / 3.0 - 1.0) / 2.0,
            1.0 / 6.0,
            1.0 / 6.0,
        ];
        for (a, e) in g.grad(x).unwrap().iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_and_confident() {
        let mut g = Graph::<f64>::new(false);
        let x = g.input(Tensor::zeros(&[2, 18]));
        let loss = g.cross_entropy(x, &[0, 17]).unwrap();
        assert!((g.value(loss).data()[0] - 18f64.ln()).abs() < 1e-12);
        assert!((18f64.ln() - 2.8904).abs() < 1e-4);
        let mut big = vec![0.0; 18];
        big[4] = 1e3;
        let y = g.input(Tensor::new(&[1, 18], big).unwrap());
        let l2 = g.cross_entropy(y, &[4]).unwrap();
        assert!(g.value(l2).data()[0] < 1e-12);
        assert!(matches!(g.cross_entropy(y, &[18]), Err(NnError::Label { label: 18, classes: 18 })));
    }

    #[test]
    fn layer_norm_normalizes_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::<f64>::new(false);
        let x = g.input(random(&[2, 6, 4], &mut rng));
        let gamma = g.input(Tensor::filled(&[6], 1.0));
        let beta = g.input(Tensor::zeros(&[6]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        let yv = g.value(y).data();
        for b in 0..2 {
            for t in 0..4 {
                let col: Vec<f64> = (0..6).map(|c| yv[b * 24 + c * 4 + t]).collect();
                let mean = col.iter().sum::<f64>() / 6.0;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
                assert!(mean.abs() < 1e-6);
                // eps shifts the variance slightly below one
                assert!((var - 1.0).abs() < 1e-3);
            }
        }
        let c = g.input(Tensor::filled(&[1, 6, 2], 3.5));
        let yc = g.layer_norm(c, gamma, beta, 1e-5).unwrap();
        assert!(g.value(yc).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_uniform_saturated_and_masked() {
        let mut g = Graph::<f64>::new(false);
        let x = g.input(Tensor::zeros(&[1, 2, 4]));
        let y = g.softmax_time(x, None).unwrap();
        assert!(g.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let mut d = vec![0.0; 4];
        d[2] = 100.0;
        let x2 = g.input(Tensor::new(&[1, 1, 4], d).unwrap());
        let y2 = g.softmax_time(x2, None).unwrap();
        assert!(g.value(y2).data()[2] > 1.0 - 1e-6);
        let y3 = g.softmax_time(x, Some(&[3])).unwrap();
        let v = g.value(y3).data();
        assert_eq!(v[3], 0.0);
        assert!((v[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_identity_cases_and_survivor_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t = Tensor::<f32>::filled(&[1_000_000], 1.0);
        let mut eval = Graph::new(false);
        let x = eval.input(t.clone());
        assert_eq!(eval.dropout(x, 0.7, &mut rng).unwrap(), x);
        let mut train = Graph::new(true);
        let x = train.input(t);
        assert_eq!(train.dropout(x, 0.0, &mut rng).unwrap(), x);
        let y = train.dropout(x, 0.5, &mut rng).unwrap();
        let kept = train.value(y).data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e6;
        assert!((kept - 0.5).abs() < 0.01, "{kept}");
        assert!(train.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(train.dropout(x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn backward_rejects_non_finite() {
        let mut g = Graph::<f64>::new(false);
        let x = g.input_with_grad(Tensor::new(&[2], vec![f64::INFINITY, 1.0]).unwrap());
        let s = g.sum_all(x);
        let p = g.mul(s, s).unwrap();
        assert!(matches!(g.backward(p), Err(NnError::NonFinite(_))));
    }
}
