//! Reverse-mode autodiff over a linear operation tape.
//!
//! A `Tape` records every forward operation in append order (which is already
//! a topological order), then `backward` replays it in reverse, accumulating
//! gradients additively into every node that requires them. Tapes are built
//! fresh for each forward pass and are single-threaded by contract; values are
//! never mutated after their producing op writes them.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{matmul_acc, matmul_transa_acc, matmul_transb_acc, Tensor};

/// Handle to one node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// Elementwise sum of two same-shape tensors.
    Add { a: Var, b: Var },
    /// `[m,n] + [n]` row broadcast.
    AddRow { a: Var, row: Var },
    /// `[c,h,w] + [c]` channel broadcast.
    AddChan { a: Var, bias: Var },
    AddConst { a: Var },
    Scale { a: Var, c: f32 },
    Mul { a: Var, b: Var },
    /// `[m,k] · [k,n]`
    Matmul { a: Var, b: Var },
    /// `[m,d] · [n,d]ᵀ`
    MatmulTransB { a: Var, b: Var },
    Relu { a: Var },
    Softmax { a: Var, axis: usize },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Per-row `(mean, 1/sqrt(var+eps))` captured in forward.
        stats: Vec<(f32, f32)>,
    },
    Conv2d {
        input: Var,
        kernels: Var,
        stride: usize,
        padding: usize,
    },
    /// Kept entries hold `1/(1-p)`, dropped entries 0.
    Dropout { a: Var, mask: Vec<f32> },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        /// Per-row weight (class weight of the target), and their sum.
        row_weights: Vec<f32>,
        denom: f64,
        /// Softmax of logits captured in forward.
        probs: Vec<f32>,
    },
    Sum { a: Var },
    Mean { a: Var },
    /// Select rows of a `[v,d]` table.
    GatherRows { table: Var, indices: Vec<usize> },
    /// Stack 2-D parts vertically (all share the column count).
    ConcatRows { parts: Vec<Var> },
    /// Columns `[start, start+len)` of a 2-D tensor.
    SliceCols { a: Var, start: usize, len: usize },
    /// Concatenate 2-D parts horizontally (all share the row count).
    ConcatCols { parts: Vec<Var> },
    /// Row pairs of a `[n,d]` tensor concatenated into `[p,2d]`.
    PairConcat { a: Var, pairs: Vec<(usize, usize)> },
    Reshape { a: Var },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f32>>,
    requires_grad: bool,
    param: Option<ParamId>,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    training: bool,
}

impl Tape {
    pub fn new(training: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            training,
        }
    }

    pub fn training(&self) -> bool {
        self.training
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

    /// Gradient of a node after `backward`, if one was accumulated.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    // No finiteness assertion here: overflow during training is a runtime
    // condition the trainer detects on the loss and reports as divergence.
    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            param,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false, None)
    }

    /// Record a leaf that tracks gradients (used directly in tests; models go
    /// through [`Tape::param`]).
    pub fn leaf_grad(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true, None)
    }

    /// Lease a parameter onto the tape. Its gradient is pulled back into the
    /// store by [`Tape::accumulate_param_grads`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Leaf, true, Some(id))
    }

    // ── Forward ops ─────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dim(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add { a, b }, rg, None))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if self.value(row).shape() != [n] {
            return Err(Error::Dim(format!(
                "add_row: row {:?} vs width {}",
                self.value(row).shape(),
                n
            )));
        }
        let mut data = self.value(a).data().to_vec();
        let r = self.value(row).data();
        for i in 0..m {
            for (d, &rv) in data[i * n..(i + 1) * n].iter_mut().zip(r) {
                *d += rv;
            }
        }
        let value = Tensor::new(vec![m, n], data)?;
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(value, Op::AddRow { a, row }, rg, None))
    }

    pub fn add_chan(&mut self, a: Var, bias: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let [c, h, w] = shape.as_slice() else {
            return Err(Error::Dim(format!("add_chan: expected 3-D, got {shape:?}")));
        };
        let (c, h, w) = (*c, *h, *w);
        if self.value(bias).shape() != [c] {
            return Err(Error::Dim(format!(
                "add_chan: bias {:?} vs {} channels",
                self.value(bias).shape(),
                c
            )));
        }
        let mut data = self.value(a).data().to_vec();
        let b = self.value(bias).data();
        for ci in 0..c {
            let bv = b[ci];
            for d in &mut data[ci * h * w..(ci + 1) * h * w] {
                *d += bv;
            }
        }
        let value = Tensor::new(shape, data)?;
        let rg = self.requires(a) || self.requires(bias);
        Ok(self.push(value, Op::AddChan { a, bias }, rg, None))
    }

    pub fn add_const(&mut self, a: Var, c: f32) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x + c).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::AddConst { a }, rg, None))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::Scale { a, c }, rg, None))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Dim(format!(
                "mul: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Mul { a, b }, rg, None))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::Dim(format!("matmul: [{m},{k}] · [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Matmul { a, b }, rg, None))
    }

    /// `a[m,d] · b[n,d]ᵀ -> [m,n]`
    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, d) = self.value(a).dims2()?;
        let (n, d2) = self.value(b).dims2()?;
        if d != d2 {
            return Err(Error::Dim(format!("matmul_transb: [{m},{d}] · [{n},{d2}]ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        matmul_transb_acc(self.value(a).data(), self.value(b).data(), m, d, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatmulTransB { a, b }, rg, None))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        // `f32::max` would flush NaN to zero and hide a diverged upstream
        // layer behind a finite loss, so NaN is passed through instead.
        let data = t
            .data()
            .iter()
            .map(|&x| if x.is_nan() { x } else { x.max(0.0) })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::Relu { a }, rg, None))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Dim(format!(
                "softmax: axis {axis} out of range for {shape:?}"
            )));
        }
        let lane = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut data = t.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * lane * inner + i;
                let mut mx = f32::NEG_INFINITY;
                for l in 0..lane {
                    mx = mx.max(data[base + l * inner]);
                }
                let mut sum = 0.0f64;
                for l in 0..lane {
                    let e = (data[base + l * inner] - mx).exp();
                    data[base + l * inner] = e;
                    sum += e as f64;
                }
                let inv = (1.0 / sum) as f32;
                for l in 0..lane {
                    data[base + l * inner] *= inv;
                }
            }
        }
        let value = Tensor::new(shape, data)?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::Softmax { a, axis }, rg, None))
    }

    /// Per-row normalization over the last dimension, then affine.
    /// Zero-variance rows normalize to zero (denominator `sqrt(0+eps)`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<Var> {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let d = *shape.last().ok_or_else(|| {
            Error::Dim("layer_norm: 0-dimensional input".to_string())
        })?;
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(Error::Dim(format!(
                "layer_norm: gamma {:?} / beta {:?} vs last dim {}",
                self.value(gamma).shape(),
                self.value(beta).shape(),
                d
            )));
        }
        let rows = t.numel() / d;
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut data = t.data().to_vec();
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &mut data[r * d..(r + 1) * d];
            let mean = (row.iter().map(|&v| v as f64).sum::<f64>() / d as f64) as f32;
            let var = (row
                .iter()
                .map(|&v| {
                    let c = (v - mean) as f64;
                    c * c
                })
                .sum::<f64>()
                / d as f64) as f32;
            let denom = var + eps;
            let rstd = if denom > 0.0 { 1.0 / denom.sqrt() } else { 0.0 };
            for (v, (&gj, &bj)) in row.iter_mut().zip(g.iter().zip(&b)) {
                *v = (*v - mean) * rstd * gj + bj;
            }
            stats.push((mean, rstd));
        }
        let value = Tensor::new(shape, data)?;
        let rg = self.requires(x) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, stats }, rg, None))
    }

    /// 2-D convolution of `[c_in,h,w]` with `[c_out,c_in,k,k]` kernels.
    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        let ishape = self.value(input).shape().to_vec();
        let kshape = self.value(kernels).shape().to_vec();
        let [c_in, h, w] = ishape.as_slice() else {
            return Err(Error::Dim(format!("conv2d: input {ishape:?} not 3-D")));
        };
        let [c_out, kc_in, kh, kw] = kshape.as_slice() else {
            return Err(Error::Dim(format!("conv2d: kernels {kshape:?} not 4-D")));
        };
        let (c_in, h, w, c_out, k) = (*c_in, *h, *w, *c_out, *kh);
        if *kc_in != c_in || *kw != k {
            return Err(Error::Dim(format!(
                "conv2d: kernels {kshape:?} vs input channels {c_in} (square kernel required)"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d: stride must be positive".to_string()));
        }
        if k > h + 2 * padding || k > w + 2 * padding {
            return Err(Error::Dim(format!(
                "conv2d: kernel {k} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let x = self.value(input).data();
        let kern = self.value(kernels).data();
        let mut out = vec![0.0f32; c_out * oh * ow];
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ci in 0..c_in {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[(ci * h + iy as usize) * w + ix as usize]
                                    * kern[((co * c_in + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        let value = Tensor::new(vec![c_out, oh, ow], out)?;
        let rg = self.requires(input) || self.requires(kernels);
        Ok(self.push(
            value,
            Op::Conv2d { input, kernels, stride, padding },
            rg,
            None,
        ))
    }

    /// In training mode, zeroes entries with probability `p` and scales
    /// survivors by `1/(1-p)`. In eval mode, returns `a` unchanged.
    pub fn dropout(&mut self, a: Var, p: f32, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout: p={p} outside [0,1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let t = self.value(a);
        let mask: Vec<f32> = (0..t.numel())
            .map(|_| if rng.bernoulli(p as f64) { 0.0 } else { keep_scale })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::Dropout { a, mask }, rg, None))
    }

    /// Mean negative log-likelihood of `targets` under `softmax(logits)`,
    /// optionally with per-class weights (normalized by the weight sum).
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        class_weights: Option<&[f32]>,
    ) -> Result<Var> {
        let (n, c) = self.value(logits).dims2()?;
        if targets.len() != n {
            return Err(Error::Dim(format!(
                "cross_entropy: {} targets for {} rows",
                targets.len(),
                n
            )));
        }
        if let Some(w) = class_weights {
            if w.len() != c {
                return Err(Error::Dim(format!(
                    "cross_entropy: {} class weights for {} classes",
                    w.len(),
                    c
                )));
            }
        }
        for (i, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::Index(format!(
                    "cross_entropy: target {t} out of range [0,{c}) at row {i}"
                )));
            }
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0f32; n * c];
        let mut row_weights = Vec::with_capacity(n);
        let mut loss = 0.0f64;
        let mut denom = 0.0f64;
        for i in 0..n {
            let row = &x[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f64;
            for (j, &v) in row.iter().enumerate() {
                let e = ((v - mx) as f64).exp();
                probs[i * c + j] = e as f32;
                sum += e;
            }
            let inv = 1.0 / sum;
            for j in 0..c {
                probs[i * c + j] = (probs[i * c + j] as f64 * inv) as f32;
            }
            let target = targets[i];
            let w = class_weights.map_or(1.0, |cw| cw[target]) as f64;
            let nll = (sum.ln() + mx as f64) - x[i * c + target] as f64;
            loss += w * nll;
            denom += w;
            row_weights.push(w as f32);
        }
        if denom == 0.0 {
            return Err(Error::Contract(
                "cross_entropy: zero total weight".to_string(),
            ));
        }
        let value = Tensor::scalar((loss / denom) as f32);
        let rg = self.requires(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                row_weights,
                denom,
                probs,
            },
            rg,
            None,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        let value = Tensor::scalar(s as f32);
        let rg = self.requires(a);
        Ok(self.push(value, Op::Sum { a }, rg, None))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::Contract("mean of empty tensor".to_string()));
        }
        let s: f64 = self.value(a).data().iter().map(|&v| v as f64).sum();
        let value = Tensor::scalar((s / n as f64) as f32);
        let rg = self.requires(a);
        Ok(self.push(value, Op::Mean { a }, rg, None))
    }

    /// Embedding lookup: rows of `table[v,d]` selected by `indices`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2()?;
        for &i in indices {
            if i >= v {
                return Err(Error::Index(format!(
                    "gather_rows: index {i} out of range [0,{v})"
                )));
            }
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![indices.len(), d], data)?;
        let rg = self.requires(table);
        Ok(self.push(
            value,
            Op::GatherRows { table, indices: indices.to_vec() },
            rg,
            None,
        ))
    }

    /// Stack 2-D tensors vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of no parts".to_string()));
        }
        let (_, d) = self.value(parts[0]).dims2()?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, dp) = self.value(p).dims2()?;
            if dp != d {
                return Err(Error::Dim(format!(
                    "concat_rows: widths {d} vs {dp} differ"
                )));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, d], data)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(value, Op::ConcatRows { parts: parts.to_vec() }, rg, None))
    }

    /// Columns `[start, start+len)` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start + len > n {
            return Err(Error::Index(format!(
                "slice_cols: [{start},{}) out of width {n}",
                start + len
            )));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let value = Tensor::new(vec![m, len], data)?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::SliceCols { a, start, len }, rg, None))
    }

    /// Concatenate 2-D tensors horizontally.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of no parts".to_string()));
        }
        let (m, _) = self.value(parts[0]).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (mp, d) = self.value(p).dims2()?;
            if mp != m {
                return Err(Error::Dim(format!(
                    "concat_cols: row counts {m} vs {mp} differ"
                )));
            }
            widths.push(d);
            total += d;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &d) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[i * d..(i + 1) * d]);
            }
        }
        let value = Tensor::new(vec![m, total], data)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(value, Op::ConcatCols { parts: parts.to_vec() }, rg, None))
    }

    /// Combination tokens: for each `(i,j)` pair, row i and row j of `a`
    /// concatenated, producing `[pairs, 2d]`.
    pub fn pair_concat(&mut self, a: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let (n, d) = self.value(a).dims2()?;
        for &(i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::Index(format!(
                    "pair_concat: pair ({i},{j}) out of range [0,{n})"
                )));
            }
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(pairs.len() * 2 * d);
        for &(i, j) in pairs {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
            data.extend_from_slice(&src[j * d..(j + 1) * d]);
        }
        let value = Tensor::new(vec![pairs.len(), 2 * d], data)?;
        let rg = self.requires(a);
        Ok(self.push(
            value,
            Op::PairConcat { a, pairs: pairs.to_vec() },
            rg,
            None,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let rg = self.requires(a);
        Ok(self.push(value, Op::Reshape { a }, rg, None))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Accumulate dLoss/dNode into every node that requires gradients,
    /// walking the tape in reverse. `loss` must be scalar.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward on non-scalar tensor of shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.requires(loss) {
            return Ok(());
        }
        self.ensure_grad(loss.0)[0] += 1.0;
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let contribs = self.op_backward(i);
            for (p, c) in contribs {
                let g = self.ensure_grad(p);
                for (a, b) in g.iter_mut().zip(&c) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    fn ensure_grad(&mut self, idx: usize) -> &mut Vec<f32> {
        let n = self.nodes[idx].value.numel();
        self.nodes[idx].grad.get_or_insert_with(|| vec![0.0; n])
    }

    /// Pull leaf gradients of leased parameters back into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) -> Result<()> {
        for node in &self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.grad.as_ref()) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }

    fn dat(&self, v: Var) -> &[f32] {
        self.nodes[v.0].value.data()
    }

    /// Gradient contributions of node `i` to each of its parents.
    fn op_backward(&self, i: usize) -> Vec<(usize, Vec<f32>)> {
        let node = &self.nodes[i];
        let g = node.grad.as_ref().expect("grad present");
        let mut out: Vec<(usize, Vec<f32>)> = Vec::new();
        let mut emit = |v: Var, c: Vec<f32>| {
            if self.nodes[v.0].requires_grad {
                out.push((v.0, c));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                emit(*a, g.clone());
                emit(*b, g.clone());
            }
            Op::AddRow { a, row } => {
                emit(*a, g.clone());
                let n = self.nodes[row.0].value.numel();
                let mut dr = vec![0.0; n];
                for chunk in g.chunks_exact(n) {
                    for (d, &gv) in dr.iter_mut().zip(chunk) {
                        *d += gv;
                    }
                }
                emit(*row, dr);
            }
            Op::AddChan { a, bias } => {
                emit(*a, g.clone());
                let c = self.nodes[bias.0].value.numel();
                let hw = g.len() / c;
                let db = g
                    .chunks_exact(hw)
                    .map(|ch| ch.iter().sum::<f32>())
                    .collect();
                emit(*bias, db);
            }
            Op::AddConst { a } => emit(*a, g.clone()),
            Op::Scale { a, c } => emit(*a, g.iter().map(|&gv| gv * c).collect()),
            Op::Mul { a, b } => {
                let (da, db) = (self.dat(*a), self.dat(*b));
                emit(*a, g.iter().zip(db).map(|(&gv, &bv)| gv * bv).collect());
                emit(*b, g.iter().zip(da).map(|(&gv, &av)| gv * av).collect());
            }
            Op::Matmul { a, b } => {
                let (m, k) = self.nodes[a.0].value.dims2().expect("checked");
                let n = self.nodes[b.0].value.shape()[1];
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    matmul_transb_acc(g, self.dat(*b), m, n, k, &mut da);
                    out.push((a.0, da));
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    matmul_transa_acc(self.dat(*a), g, m, k, n, &mut db);
                    out.push((b.0, db));
                }
            }
            Op::MatmulTransB { a, b } => {
                let (m, d) = self.nodes[a.0].value.dims2().expect("checked");
                let n = self.nodes[b.0].value.shape()[0];
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * d];
                    matmul_acc(g, self.dat(*b), m, n, d, &mut da);
                    out.push((a.0, da));
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; n * d];
                    matmul_transa_acc(g, self.dat(*a), m, n, d, &mut db);
                    out.push((b.0, db));
                }
            }
            Op::Relu { a } => {
                let x = self.dat(*a);
                emit(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect(),
                );
            }
            Op::Softmax { a, axis } => {
                let y = node.value.data();
                let shape = node.value.shape();
                let lane = shape[*axis];
                let inner: usize = shape[*axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for ii in 0..inner {
                        let base = o * lane * inner + ii;
                        let mut dot = 0.0f64;
                        for l in 0..lane {
                            let idx = base + l * inner;
                            dot += (g[idx] * y[idx]) as f64;
                        }
                        for l in 0..lane {
                            let idx = base + l * inner;
                            dx[idx] = y[idx] * (g[idx] - dot as f32);
                        }
                    }
                }
                emit(*a, dx);
            }
            Op::LayerNorm { x, gamma, beta, stats } => {
                let xv = self.dat(*x);
                let gv = self.dat(*gamma);
                let d = gv.len();
                let rows = xv.len() / d;
                let need_x = self.nodes[x.0].requires_grad;
                let need_g = self.nodes[gamma.0].requires_grad;
                let need_b = self.nodes[beta.0].requires_grad;
                let mut dx = if need_x { vec![0.0; xv.len()] } else { Vec::new() };
                let mut dg = if need_g { vec![0.0; d] } else { Vec::new() };
                let mut db = if need_b { vec![0.0; d] } else { Vec::new() };
                for r in 0..rows {
                    let (mean, rstd) = stats[r];
                    let xr = &xv[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    if need_b {
                        for (dbj, &grj) in db.iter_mut().zip(gr) {
                            *dbj += grj;
                        }
                    }
                    if need_g {
                        for j in 0..d {
                            dg[j] += gr[j] * (xr[j] - mean) * rstd;
                        }
                    }
                    if need_x {
                        let mut sum_gy = 0.0f64;
                        let mut sum_gyx = 0.0f64;
                        for j in 0..d {
                            let gy = (gr[j] * gv[j]) as f64;
                            sum_gy += gy;
                            sum_gyx += gy * ((xr[j] - mean) * rstd) as f64;
                        }
                        let m1 = (sum_gy / d as f64) as f32;
                        let m2 = (sum_gyx / d as f64) as f32;
                        let dxr = &mut dx[r * d..(r + 1) * d];
                        for j in 0..d {
                            let xhat = (xr[j] - mean) * rstd;
                            dxr[j] = rstd * (gr[j] * gv[j] - m1 - xhat * m2);
                        }
                    }
                }
                if need_x {
                    out.push((x.0, dx));
                }
                if need_g {
                    out.push((gamma.0, dg));
                }
                if need_b {
                    out.push((beta.0, db));
                }
            }
            Op::Conv2d { input, kernels, stride, padding } => {
                let ishape = self.nodes[input.0].value.shape();
                let kshape = self.nodes[kernels.0].value.shape();
                let (c_in, h, w) = (ishape[0], ishape[1], ishape[2]);
                let (c_out, k) = (kshape[0], kshape[2]);
                let oshape = node.value.shape();
                let (oh, ow) = (oshape[1], oshape[2]);
                let x = self.dat(*input);
                let kern = self.dat(*kernels);
                let need_x = self.nodes[input.0].requires_grad;
                let need_k = self.nodes[kernels.0].requires_grad;
                let mut dx = if need_x { vec![0.0; x.len()] } else { Vec::new() };
                let mut dk = if need_k { vec![0.0; kern.len()] } else { Vec::new() };
                for co in 0..c_out {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g[(co * oh + oy) * ow + ox];
                            if gv == 0.0 {
                                continue;
                            }
                            for ci in 0..c_in {
                                for ky in 0..k {
                                    let iy = (oy * stride + ky) as isize - *padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..k {
                                        let ix = (ox * stride + kx) as isize - *padding as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = (ci * h + iy as usize) * w + ix as usize;
                                        let ki = ((co * c_in + ci) * k + ky) * k + kx;
                                        if need_x {
                                            dx[xi] += gv * kern[ki];
                                        }
                                        if need_k {
                                            dk[ki] += gv * x[xi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if need_x {
                    out.push((input.0, dx));
                }
                if need_k {
                    out.push((kernels.0, dk));
                }
            }
            Op::Dropout { a, mask } => {
                emit(*a, g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect());
            }
            Op::CrossEntropy { logits, targets, row_weights, denom, probs } => {
                let c = probs.len() / targets.len();
                let gv = g[0];
                let mut dl = vec![0.0f32; probs.len()];
                for (i, (&t, &w)) in targets.iter().zip(row_weights).enumerate() {
                    let scale = gv * w / *denom as f32;
                    for j in 0..c {
                        let indicator = if j == t { 1.0 } else { 0.0 };
                        dl[i * c + j] = scale * (probs[i * c + j] - indicator);
                    }
                }
                emit(*logits, dl);
            }
            Op::Sum { a } => {
                let n = self.nodes[a.0].value.numel();
                emit(*a, vec![g[0]; n]);
            }
            Op::Mean { a } => {
                let n = self.nodes[a.0].value.numel();
                emit(*a, vec![g[0] / n as f32; n]);
            }
            Op::GatherRows { table, indices } => {
                let (v, d) = self.nodes[table.0].value.dims2().expect("checked");
                let mut dt = vec![0.0; v * d];
                for (row, &idx) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[idx * d + j] += g[row * d + j];
                    }
                }
                emit(*table, dt);
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.numel();
                    emit(p, g[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::SliceCols { a, start, len } => {
                let (m, n) = self.nodes[a.0].value.dims2().expect("checked");
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..*len {
                        da[i * n + start + j] += g[i * len + j];
                    }
                }
                emit(*a, da);
            }
            Op::ConcatCols { parts } => {
                let widths: Vec<usize> =
                    parts.iter().map(|&p| self.nodes[p.0].value.shape()[1]).collect();
                let total: usize = widths.iter().sum();
                let m = node.value.shape()[0];
                let mut offset = 0;
                for (&p, &d) in parts.iter().zip(&widths) {
                    if self.nodes[p.0].requires_grad {
                        let mut dp = vec![0.0; m * d];
                        for i in 0..m {
                            dp[i * d..(i + 1) * d]
                                .copy_from_slice(&g[i * total + offset..i * total + offset + d]);
                        }
                        out.push((p.0, dp));
                    }
                    offset += d;
                }
            }
            Op::PairConcat { a, pairs } => {
                let (n, d) = self.nodes[a.0].value.dims2().expect("checked");
                let mut da = vec![0.0; n * d];
                for (row, &(i, j)) in pairs.iter().enumerate() {
                    for c in 0..d {
                        da[i * d + c] += g[row * 2 * d + c];
                        da[j * d + c] += g[row * 2 * d + d + c];
                    }
                }
                emit(*a, da);
            }
            Op::Reshape { a } => emit(*a, g.clone()),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: &[f32]) -> Tensor {
        Tensor::new(vec![rows, cols], data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new(false);
        let i2 = tape.leaf(t2(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_expansion() {
        // Oracle: c[i][j] = sum_k a[i][k]*b[k][j], expanded by hand.
        let a = [[1.0f64, 2.0], [3.0, 4.0]];
        let b = [[5.0f64, 6.0], [7.0, 8.0]];
        let mut expect = [[0.0f64; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for (k, row) in b.iter().enumerate() {
                    expect[i][j] += a[i][k] * row[j];
                }
            }
        }
        assert_eq!(expect, [[19.0, 22.0], [43.0, 50.0]]);

        let mut tape = Tape::new(false);
        let av = tape.leaf(t2(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let bv = tape.leaf(t2(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let out = tape.matmul(av, bv).unwrap();
        assert_eq!(tape.value(out).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let mut tape = Tape::new(false);
        let z = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::from_fn(vec![3, 4], |i| i as f32 - 5.0));
        let out = tape.matmul(z, b).unwrap();
        assert_eq!(tape.value(out).shape(), &[2, 4]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let mut tape = Tape::new(false);
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![4, 2]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dim(_))));
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut tape = Tape::new(false);
        let input = tape.leaf(Tensor::from_fn(vec![1, 4, 4], |i| i as f32));
        let kernel = tape.leaf(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let out = tape.conv2d(input, kernel, 1, 0).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 4, 4]);
        assert_eq!(tape.value(out).data(), tape.value(input).data());
    }

    #[test]
    fn conv2d_output_shape_follows_floor_formula() {
        // floor((5 + 2*1 - 3)/2) + 1 = 3
        let mut tape = Tape::new(false);
        let input = tape.leaf(Tensor::zeros(vec![1, 5, 5]));
        let kernel = tape.leaf(Tensor::zeros(vec![1, 1, 3, 3]));
        let out = tape.conv2d(input, kernel, 2, 1).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 3, 3]);
    }

    #[test]
    fn conv2d_all_ones_sums_window() {
        let mut tape = Tape::new(false);
        let input = tape.leaf(Tensor::full(vec![1, 3, 3], 1.0));
        let kernel = tape.leaf(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let out = tape.conv2d(input, kernel, 1, 0).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 1, 1]);
        assert_eq!(tape.value(out).data(), &[9.0]);
    }

    #[test]
    fn conv2d_kernel_too_large_errors() {
        let mut tape = Tape::new(false);
        let input = tape.leaf(Tensor::zeros(vec![1, 2, 2]));
        let kernel = tape.leaf(Tensor::zeros(vec![1, 1, 3, 3]));
        assert!(tape.conv2d(input, kernel, 1, 0).is_err());
    }

    #[test]
    fn softmax_symmetry_and_oracle() {
        let mut tape = Tape::new(false);
        let x = tape.leaf(t2(1, 2, &[0.0, 0.0]));
        let y = tape.softmax(x, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

        // Direct exp/sum oracle in f64.
        let vals = [1.0f64, 2.0, 3.0];
        let z: f64 = vals.iter().map(|v| v.exp()).sum();
        let expect: Vec<f64> = vals.iter().map(|v| v.exp() / z).collect();
        let x = tape.leaf(t2(1, 3, &[1.0, 2.0, 3.0]));
        let y = tape.softmax(x, 1).unwrap();
        for (got, want) in tape.value(y).data().iter().zip(&expect) {
            assert!((*got as f64 - want).abs() < 1e-4, "{got} vs {want}");
        }
        // Spec reference values.
        let reference = [0.0900, 0.2447, 0.6652];
        for (got, want) in tape.value(y).data().iter().zip(&reference) {
            assert!((got - want).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut tape = Tape::new(false);
        let x = tape.leaf(t2(1, 4, &[0.3, -1.2, 2.0, 0.7]));
        let y1 = tape.softmax(x, 1).unwrap();
        let xc = tape.add_const(x, 13.5).unwrap();
        let y2 = tape.softmax(xc, 1).unwrap();
        for (a, b) in tape.value(y1).data().iter().zip(tape.value(y2).data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_nonnegative() {
        let mut rng = Rng::from_seed(3);
        let mut tape = Tape::new(false);
        let x = tape.leaf(Tensor::from_fn(vec![5, 7], |_| {
            (rng.next_f32() - 0.5) * 10.0
        }));
        let y = tape.softmax(x, 1).unwrap();
        for row in tape.value(y).data().chunks_exact(7) {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn layer_norm_zero_variance_row_is_beta() {
        let mut tape = Tape::new(false);
        let x = tape.leaf(t2(1, 4, &[3.0, 3.0, 3.0, 3.0]));
        let gamma = tape.leaf(Tensor::full(vec![4], 1.0));
        let beta = tape.leaf(Tensor::zeros(vec![4]));
        let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 4]);
    }

    #[test]
    fn layer_norm_two_point_row() {
        // Oracle: mean 2, population std 1, so with eps=0 the row is [-1, 1].
        let mut tape = Tape::new(false);
        let x = tape.leaf(t2(1, 2, &[1.0, 3.0]));
        let gamma = tape.leaf(Tensor::full(vec![2], 1.0));
        let beta = tape.leaf(Tensor::zeros(vec![2]));
        let y = tape.layer_norm(x, gamma, beta, 0.0).unwrap();
        let got = tape.value(y).data();
        assert!((got[0] - -1.0).abs() < 1e-6);
        assert!((got[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_zero_gamma_collapses_to_beta() {
        let mut tape = Tape::new(false);
        let x = tape.leaf(t2(2, 3, &[1.0, 5.0, -2.0, 0.5, 0.25, 9.0]));
        let gamma = tape.leaf(Tensor::zeros(vec![3]));
        let beta = tape.leaf(Tensor::new(vec![3], vec![7.0, -1.0, 2.5]).unwrap());
        let y = tape.layer_norm(x, gamma, beta, 1e-5).unwrap();
        for row in tape.value(y).data().chunks_exact(3) {
            assert_eq!(row, &[7.0, -1.0, 2.5]);
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut tape = Tape::new(false);
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn dropout_eval_is_bit_exact_identity() {
        let mut tape = Tape::new(false);
        let mut rng = Rng::from_seed(1);
        let x = tape.leaf(Tensor::from_fn(vec![10], |i| i as f32 * 0.37));
        let y = tape.dropout(x, 0.5, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_training_zero_fraction_matches_p() {
        let mut tape = Tape::new(true);
        let mut rng = Rng::from_seed(2);
        let n = 20_000;
        let p = 0.3f32;
        let x = tape.leaf(Tensor::full(vec![n], 1.0));
        let y = tape.dropout(x, p, &mut rng).unwrap();
        let zeros = tape.value(y).data().iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / n as f64;
        assert!((frac - p as f64).abs() < 0.02, "zero fraction {frac}");
        let scale = 1.0 / (1.0 - p);
        assert!(tape
            .value(y)
            .data()
            .iter()
            .all(|&v| v == 0.0 || (v - scale).abs() < 1e-6));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let mut tape = Tape::new(false);
        let logits = tape.leaf(t2(1, 2, &[0.0, 0.0]));
        let loss = tape.cross_entropy(logits, &[0], None).unwrap();
        let got = tape.value(loss).item().unwrap();
        assert!((got as f64 - 2.0f64.ln()).abs() < 1e-6, "{got}");
    }

    #[test]
    fn cross_entropy_target_out_of_range_errors() {
        let mut tape = Tape::new(false);
        let logits = tape.leaf(t2(1, 2, &[0.0, 0.0]));
        assert!(matches!(
            tape.cross_entropy(logits, &[2], None),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new(false);
        let x = tape.leaf_grad(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        // d/dx sum(x*x) = 2x, analytic.
        let mut tape = Tape::new(false);
        let x = tape.leaf_grad(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new(false);
        let x = tape.leaf_grad(Tensor::zeros(vec![2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn gradients_accumulate_across_uses() {
        // loss = sum(x) + sum(x): each element contributes twice.
        let mut tape = Tape::new(false);
        let x = tape.leaf_grad(Tensor::new(vec![2], vec![5.0, -3.0]).unwrap());
        let s1 = tape.sum(x).unwrap();
        let s2 = tape.sum(x).unwrap();
        let total = tape.add(s1, s2).unwrap();
        tape.backward(total).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn gather_rows_scatter_adds_on_backward() {
        let mut tape = Tape::new(false);
        let table = tape.leaf_grad(t2(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let picked = tape.gather_rows(table, &[1, 1, 0]).unwrap();
        assert_eq!(tape.value(picked).data(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let s = tape.sum(picked).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(table).unwrap(), &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn pair_concat_layout_and_backward() {
        let mut tape = Tape::new(false);
        let x = tape.leaf_grad(t2(3, 2, &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]));
        let p = tape.pair_concat(x, &[(0, 2), (1, 2)]).unwrap();
        assert_eq!(tape.value(p).shape(), &[2, 4]);
        assert_eq!(
            tape.value(p).data(),
            &[0.0, 1.0, 20.0, 21.0, 10.0, 11.0, 20.0, 21.0]
        );
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn slice_and_concat_cols_roundtrip() {
        let mut tape = Tape::new(false);
        let x = tape.leaf(t2(2, 4, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]));
        let left = tape.slice_cols(x, 0, 2).unwrap();
        let right = tape.slice_cols(x, 2, 2).unwrap();
        let back = tape.concat_cols(&[left, right]).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(x).data());
    }
}
