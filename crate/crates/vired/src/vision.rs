//! ViT-style image encoder: linear patch embedding, learned positional
//! embeddings, and pre-norm transformer blocks. All patch tokens are kept
//! (no class token) because the decoder consumes the whole map as memory.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Cut a `[c, s, s]` image into non-overlapping `p × p` patches in raster
/// order (left-to-right, top-to-bottom) and flatten each one channel-major:
/// row `k` of the result is `[c0 pixels.., c1 pixels.., c2 pixels..]`.
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let shape = image.shape();
    let [c, h, w] = shape else {
        return Err(Error::Dim(format!("patchify: image {shape:?} not 3-D")));
    };
    let (c, h, w) = (*c, *h, *w);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Dim(format!(
            "patchify: {h}x{w} image not divisible into {patch}x{patch} patches"
        )));
    }
    let (rows, cols) = (h / patch, w / patch);
    let src = image.data();
    let mut out = Vec::with_capacity(rows * cols * c * patch * patch);
    for pr in 0..rows {
        for pc in 0..cols {
            for ch in 0..c {
                for dy in 0..patch {
                    let y = pr * patch + dy;
                    let base = (ch * h + y) * w + pc * patch;
                    out.extend_from_slice(&src[base..base + patch]);
                }
            }
        }
    }
    Tensor::new(vec![rows * cols, c * patch * patch], out)
}

struct EncoderBlock {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

pub struct VisionEncoder {
    patch_embed: Linear,
    pos_embed: ParamId,
    blocks: Vec<EncoderBlock>,
    image_size: usize,
    patch_size: usize,
    calls: AtomicU64,
}

impl VisionEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        let patch_dim = 3 * cfg.patch_size * cfg.patch_size;
        let patch_embed =
            Linear::new_trunc_normal(store, "vision.patch_embed", patch_dim, cfg.dim, 0.02, rng);
        let pos_embed = store.register(
            "vision.pos_embed".to_string(),
            Tensor::from_fn(vec![cfg.n_patches(), cfg.dim], |_| rng.trunc_normal(0.02)),
        );
        let mut blocks = Vec::with_capacity(cfg.vision_layers);
        for l in 0..cfg.vision_layers {
            let p = format!("vision.block{l}");
            blocks.push(EncoderBlock {
                ln1: LayerNorm::new(store, &format!("{p}.ln1"), cfg.dim),
                attn: MultiHeadAttention::new_trunc_normal(
                    store,
                    &format!("{p}.attn"),
                    cfg.dim,
                    cfg.vision_heads,
                    0.02,
                    rng,
                )?,
                ln2: LayerNorm::new(store, &format!("{p}.ln2"), cfg.dim),
                ffn: FeedForward::new_trunc_normal(store, &format!("{p}.ffn"), cfg.dim, 0.02, rng),
            });
        }
        Ok(VisionEncoder {
            patch_embed,
            pos_embed,
            blocks,
            image_size: cfg.image_size,
            patch_size: cfg.patch_size,
            calls: AtomicU64::new(0),
        })
    }

    /// Encode one image into `[n_patches, D]` cross-attention memory.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, image: &Tensor) -> Result<Var> {
        let s = self.image_size;
        if image.shape() != [3, s, s] {
            return Err(Error::Config(format!(
                "vision encoder expects [3, {s}, {s}], got {:?}",
                image.shape()
            )));
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
        let patches = tape.leaf(patchify(image, self.patch_size)?);
        let embedded = self.patch_embed.forward(tape, store, patches)?;
        let pos = tape.param(store, self.pos_embed);
        let mut x = tape.add(embedded, pos)?;
        for block in &self.blocks {
            let h = block.ln1.forward(tape, store, x)?;
            let attn = block.attn.forward(tape, store, h, h)?;
            x = tape.add(x, attn)?;
            let h = block.ln2.forward(tape, store, x)?;
            let ffn = block.ffn.forward(tape, store, h)?;
            x = tape.add(x, ffn)?;
        }
        Ok(x)
    }

    /// How many images have been encoded since the last reset. Used to verify
    /// the encoder runs exactly once per drawing during inference.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_call_count(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}
