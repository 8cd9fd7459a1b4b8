//! Model configuration presets and the assembled relation-prediction model.

use serde::{Deserialize, Serialize};

use crate::decoder::{enumerate_pairs, Decoder, PairIndex, RelationHead};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::object::{rasterize_mask, BoundingBox, InstanceType, ObjectEncoder};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::vision::VisionEncoder;

/// Which head the model carries. Pretraining classifies the masked region's
/// document class and deliberately has no type-embedding table at all, so
/// that code path cannot read one even by accident.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    Pretrain,
    Relation,
}

/// Document classes used by the pretraining corpus.
pub const PRETRAIN_CLASSES: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Embedding width D.
    pub dim: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub vision_layers: usize,
    pub vision_heads: usize,
    pub mask_size: usize,
    /// Three ascending CNN stage widths for the mask encoder.
    pub conv_channels: [usize; 3],
    pub decoder_layers: usize,
    pub decoder_heads: usize,
    pub dropout: f32,
}

impl ModelConfig {
    /// Small configuration that trains end to end on one CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            dim: 64,
            image_size: 112,
            patch_size: 14,
            vision_layers: 2,
            vision_heads: 4,
            mask_size: 56,
            conv_channels: [8, 16, 32],
            decoder_layers: 2,
            decoder_heads: 4,
            dropout: 0.1,
        }
    }

    /// Published-scale configuration; used for analysis (FLOPs), not for
    /// CPU training.
    pub fn paper() -> Self {
        ModelConfig {
            dim: 768,
            image_size: 518,
            patch_size: 14,
            vision_layers: 12,
            vision_heads: 12,
            mask_size: 224,
            conv_channels: [32, 64, 128],
            decoder_layers: 2,
            decoder_heads: 12,
            dropout: 0.1,
        }
    }

    /// Miniature configuration for fast smoke tests; not a training target.
    pub fn tiny() -> Self {
        ModelConfig {
            dim: 16,
            image_size: 32,
            patch_size: 8,
            vision_layers: 1,
            vision_heads: 2,
            mask_size: 16,
            conv_channels: [4, 8, 8],
            decoder_layers: 1,
            decoder_heads: 2,
            dropout: 0.1,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected 'desk' or 'paper')"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim % 2 != 0 {
            return Err(Error::Config(format!(
                "dim {} must be positive and even (the relation head halves it)",
                self.dim
            )));
        }
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.vision_heads == 0 || self.dim % self.vision_heads != 0 {
            return Err(Error::Config(format!(
                "dim {} not divisible by vision heads {}",
                self.dim, self.vision_heads
            )));
        }
        if self.decoder_heads == 0 || self.dim % self.decoder_heads != 0 {
            return Err(Error::Config(format!(
                "dim {} not divisible by decoder heads {}",
                self.dim, self.decoder_heads
            )));
        }
        if self.mask_size % 8 != 0 || self.mask_size == 0 {
            return Err(Error::Config(format!(
                "mask size {} must be a positive multiple of 8 (three stride-2 stages)",
                self.mask_size
            )));
        }
        if self.decoder_layers == 0 {
            return Err(Error::Config("decoder needs at least one layer".to_string()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        let per_side = self.image_size / self.patch_size;
        per_side * per_side
    }
}

/// The assembled pipeline: vision encoder, mask encoder, fusion decoder, and
/// one task head.
pub struct Model {
    pub cfg: ModelConfig,
    pub mode: TaskMode,
    pub vision: VisionEncoder,
    pub object: ObjectEncoder,
    pub decoder: Decoder,
    /// `[2, D]` Circuit/Table table; present only in relation mode.
    pub type_embed: Option<ParamId>,
    pub rel_head: Option<RelationHead>,
    /// Two-layer region classifier; present only in pretrain mode.
    pub pretrain_head: Option<(Linear, Linear)>,
}

impl Model {
    pub fn new(cfg: ModelConfig, mode: TaskMode, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let vision = VisionEncoder::new(store, &cfg, rng)?;
        let object = ObjectEncoder::new(store, &cfg, rng)?;
        let decoder = Decoder::new(store, &cfg, rng)?;
        let (type_embed, rel_head, pretrain_head) = match mode {
            TaskMode::Relation => {
                let te = store.register("type_embed".to_string(), Tensor::zeros(vec![2, cfg.dim]));
                let head = RelationHead::new(store, cfg.dim, rng);
                (Some(te), Some(head), None)
            }
            TaskMode::Pretrain => {
                let fc1 = Linear::new(store, "pretrain_head.fc1", cfg.dim, cfg.dim, rng);
                let fc2 = Linear::new(store, "pretrain_head.fc2", cfg.dim, PRETRAIN_CLASSES, rng);
                (None, None, Some((fc1, fc2)))
            }
        };
        Ok(Model { cfg, mode, vision, object, decoder, type_embed, rel_head, pretrain_head })
    }

    /// Rasterize and encode every box, then add type embeddings when the
    /// relation head is active. Returns `[N, D]`.
    fn object_tokens(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        boxes: &[BoundingBox],
        types: Option<&[InstanceType]>,
        image_px: usize,
    ) -> Result<Var> {
        let mut encoded = Vec::with_capacity(boxes.len());
        for bbox in boxes {
            let mask = rasterize_mask(bbox, image_px, self.cfg.mask_size)?;
            let mask_var = tape.leaf(mask);
            encoded.push(self.object.encode_mask(tape, store, mask_var)?);
        }
        let stacked = tape.concat_rows(&encoded)?;
        match (types, self.type_embed) {
            (Some(types), Some(te)) => {
                let table = tape.param(store, te);
                let idx: Vec<usize> = types.iter().map(|t| *t as usize).collect();
                let rows = tape.gather_rows(table, &idx)?;
                tape.add(stacked, rows)
            }
            _ => Ok(stacked),
        }
    }

    /// Relation logits `[N_c·N_t, 2]` plus the pair list they correspond to.
    /// `image` is `[3, S, S]` in the configured size; boxes live in original
    /// image pixel coordinates (`image_px` wide).
    pub fn forward_relations(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        image: &Tensor,
        boxes: &[BoundingBox],
        types: &[InstanceType],
        image_px: usize,
        rng: &mut Rng,
    ) -> Result<(Var, Vec<PairIndex>)> {
        let head = self
            .rel_head
            .as_ref()
            .ok_or_else(|| Error::Contract("relation forward on a pretrain-mode model".to_string()))?;
        if boxes.len() != types.len() {
            return Err(Error::Dim(format!(
                "{} boxes vs {} types",
                boxes.len(),
                types.len()
            )));
        }
        let pairs = enumerate_pairs(types);
        if pairs.is_empty() {
            return Err(Error::Contract(
                "no circuit-table pairs to score in this drawing".to_string(),
            ));
        }
        let memory = self.vision.encode(tape, store, image)?;
        let tokens = self.object_tokens(tape, store, boxes, Some(types), image_px)?;
        let fused = self.decoder.fuse(tape, store, tokens, memory, rng)?;
        let logits = head.logits(tape, store, fused, &pairs)?;
        Ok((logits, pairs))
    }

    /// Region-classification logits `[N, 5]` for the pretraining task.
    pub fn forward_pretrain(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        image: &Tensor,
        boxes: &[BoundingBox],
        image_px: usize,
        rng: &mut Rng,
    ) -> Result<Var> {
        let (fc1, fc2) = self
            .pretrain_head
            .as_ref()
            .ok_or_else(|| Error::Contract("pretrain forward on a relation-mode model".to_string()))?;
        if boxes.is_empty() {
            return Err(Error::Contract("no regions to classify".to_string()));
        }
        let memory = self.vision.encode(tape, store, image)?;
        let tokens = self.object_tokens(tape, store, boxes, None, image_px)?;
        let fused = self.decoder.fuse(tape, store, tokens, memory, rng)?;
        let h = fc1.forward(tape, store, fused)?;
        let h = tape.relu(h)?;
        fc2.forward(tape, store, h)
    }
}
