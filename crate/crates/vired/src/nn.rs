//! Parameterized layers built on the tape primitives.
//!
//! Layers register their tensors in a [`ParamStore`] at construction and keep
//! only the ids; `forward` leases the current values onto the caller's tape,
//! so one layer can run in many tapes over its lifetime.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Affine map `x·W + b` with `W: [in, out]`, `b: [out]`.
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Both tensors start uniform in `±sqrt(1/in_dim)`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let bound = (1.0 / in_dim as f64).sqrt();
        let weight = store.register(
            format!("{prefix}.weight"),
            Tensor::from_fn(vec![in_dim, out_dim], |_| rng.uniform_sym(bound)),
        );
        let bias = store.register(
            format!("{prefix}.bias"),
            Tensor::from_fn(vec![out_dim], |_| rng.uniform_sym(bound)),
        );
        Linear { weight, bias, in_dim, out_dim }
    }

    /// Truncated-normal weights, zero biases (vision-encoder convention).
    pub fn new_trunc_normal(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.register(
            format!("{prefix}.weight"),
            Tensor::from_fn(vec![in_dim, out_dim], |_| rng.trunc_normal(std)),
        );
        let bias = store.register(format!("{prefix}.bias"), Tensor::zeros(vec![out_dim]));
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Layer normalization with learned scale and shift.
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Self {
        let gamma = store.register(format!("{prefix}.gamma"), Tensor::full(vec![dim], 1.0));
        let beta = store.register(format!("{prefix}.beta"), Tensor::zeros(vec![dim]));
        LayerNorm { gamma, beta, eps: 1e-5 }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, self.eps)
    }
}

/// Multi-head scaled dot-product attention without any masking or positional
/// bias, so the output is equivariant to permutations of the query rows and
/// invariant to permutations of the key/value rows.
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention: dim {dim} not divisible by heads {heads}"
            )));
        }
        Ok(MultiHeadAttention {
            wq: Linear::new(store, &format!("{prefix}.wq"), dim, dim, rng),
            wk: Linear::new(store, &format!("{prefix}.wk"), dim, dim, rng),
            wv: Linear::new(store, &format!("{prefix}.wv"), dim, dim, rng),
            wo: Linear::new(store, &format!("{prefix}.wo"), dim, dim, rng),
            heads,
            dim,
        })
    }

    /// Truncated-normal projection weights with zero biases.
    pub fn new_trunc_normal(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention: dim {dim} not divisible by heads {heads}"
            )));
        }
        let mut mk = |name: &str, rng: &mut Rng| {
            Linear::new_trunc_normal(store, &format!("{prefix}.{name}"), dim, dim, std, rng)
        };
        Ok(MultiHeadAttention {
            wq: mk("wq", rng),
            wk: mk("wk", rng),
            wv: mk("wv", rng),
            wo: mk("wo", rng),
            heads,
            dim,
        })
    }

    /// `query: [n_q, dim]` attends over `memory: [n_kv, dim]`.
    /// Self-attention is the `memory == query` case.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: Var,
        memory: Var,
    ) -> Result<Var> {
        let q = self.wq.forward(tape, store, query)?;
        let k = self.wk.forward(tape, store, memory)?;
        let v = self.wv.forward(tape, store, memory)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f32).sqrt();
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
            let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
            let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
            let scores = tape.matmul_transb(qh, kh)?;
            let scaled = tape.scale(scores, scale)?;
            let attn = tape.softmax(scaled, 1)?;
            head_outs.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_cols(&head_outs)?;
        self.wo.forward(tape, store, merged)
    }
}

/// Two-layer position-wise MLP with the conventional 4x expansion.
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut Rng) -> Self {
        FeedForward {
            fc1: Linear::new(store, &format!("{prefix}.fc1"), dim, 4 * dim, rng),
            fc2: Linear::new(store, &format!("{prefix}.fc2"), 4 * dim, dim, rng),
        }
    }

    pub fn new_trunc_normal(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Self {
        FeedForward {
            fc1: Linear::new_trunc_normal(store, &format!("{prefix}.fc1"), dim, 4 * dim, std, rng),
            fc2: Linear::new_trunc_normal(store, &format!("{prefix}.fc2"), 4 * dim, dim, std, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        self.fc2.forward(tape, store, h)
    }
}
