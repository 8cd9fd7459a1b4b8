//! Object tokens: binary position masks rasterized from bounding boxes, a
//! small CNN that embeds them, and the additive type embedding.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::Linear;
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Axis-aligned box in original image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn validate(&self, image_size: u32) -> Result<()> {
        if self.w == 0 || self.h == 0 {
            return Err(Error::Contract(format!("zero-extent box {self:?}")));
        }
        if self.x + self.w > image_size || self.y + self.h > image_size {
            return Err(Error::Contract(format!(
                "box {self:?} exceeds {image_size}px image"
            )));
        }
        Ok(())
    }
}

/// Endpoint role of an instance in the relation task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum InstanceType {
    Circuit = 0,
    Table = 1,
}

impl InstanceType {
    pub fn from_category(id: u32) -> Result<Self> {
        match id {
            0 => Ok(InstanceType::Circuit),
            1 => Ok(InstanceType::Table),
            other => Err(Error::Dataset(format!(
                "category id {other} is not a relation-task type (0=circuit, 1=table)"
            ))),
        }
    }
}

static DEGENERATE_MASKS: AtomicU64 = AtomicU64::new(0);

/// Boxes whose scaled raster would have been empty and were clamped to one
/// pixel, since process start.
pub fn degenerate_mask_count() -> u64 {
    DEGENERATE_MASKS.load(Ordering::Relaxed)
}

/// Scale a box from `image_size` down to a `mask_size` square binary raster.
/// A mask pixel is 1 iff its center, mapped back to image coordinates, lies
/// inside the closed box `[x, x+w] × [y, y+h]`. The comparison is done in
/// exact integer arithmetic: center of column c is `(2c+1)·image/(2·mask)`.
pub fn rasterize_mask(bbox: &BoundingBox, image_size: usize, mask_size: usize) -> Result<Tensor> {
    if image_size == 0 || mask_size == 0 {
        return Err(Error::Config("rasterize: zero-sized geometry".to_string()));
    }
    bbox.validate(image_size as u32)?;
    let m = mask_size as u64;
    let i = image_size as u64;
    // Closed inclusion on the half-pixel grid: lo ≤ (2k+1)·i ≤ hi.
    let span = |lo_px: u64, extent: u64| -> (u64, u64) {
        (2 * lo_px * m, 2 * (lo_px + extent) * m)
    };
    let inside = |k: u64, (lo, hi): (u64, u64)| -> bool {
        let center = (2 * k + 1) * i;
        lo <= center && center <= hi
    };
    let xs = span(bbox.x as u64, bbox.w as u64);
    let ys = span(bbox.y as u64, bbox.h as u64);
    let mut data = vec![0.0f32; mask_size * mask_size];
    let mut any = false;
    for r in 0..m {
        if !inside(r, ys) {
            continue;
        }
        for c in 0..m {
            if inside(c, xs) {
                data[(r * m + c) as usize] = 1.0;
                any = true;
            }
        }
    }
    if !any {
        // Between two pixel centers in at least one axis: keep the single
        // nearest pixel so downstream layers never see an all-zero position.
        // Box center and pixel centers are compared at a common scale of 4m:
        // box → lo+hi = 2m(2x+w), pixel k → 2(2k+1)i.
        let nearest = |(lo, hi): (u64, u64)| -> u64 {
            let target = lo + hi;
            let mut best = 0u64;
            let mut best_d = u64::MAX;
            for k in 0..m {
                let center = 2 * (2 * k + 1) * i;
                let d = center.abs_diff(target);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best
        };
        let r = nearest(ys);
        let c = nearest(xs);
        data[(r * m + c) as usize] = 1.0;
        DEGENERATE_MASKS.fetch_add(1, Ordering::Relaxed);
    }
    Tensor::new(vec![1, mask_size, mask_size], data)
}

/// Three stride-2 conv stages with ReLU, then a linear projection to D.
pub struct ObjectEncoder {
    convs: Vec<(ParamId, ParamId)>,
    proj: Linear,
    mask_size: usize,
}

impl ObjectEncoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.mask_size % 8 != 0 {
            return Err(Error::Config(format!(
                "mask size {} not divisible by 8",
                cfg.mask_size
            )));
        }
        let widths = [
            (1, cfg.conv_channels[0]),
            (cfg.conv_channels[0], cfg.conv_channels[1]),
            (cfg.conv_channels[1], cfg.conv_channels[2]),
        ];
        let mut convs = Vec::with_capacity(3);
        for (stage, (c_in, c_out)) in widths.into_iter().enumerate() {
            let bound = (1.0 / (c_in * 9) as f64).sqrt();
            let kernel = store.register(
                format!("object.conv{stage}.kernel"),
                Tensor::from_fn(vec![c_out, c_in, 3, 3], |_| rng.uniform_sym(bound)),
            );
            let bias = store.register(
                format!("object.conv{stage}.bias"),
                Tensor::from_fn(vec![c_out], |_| rng.uniform_sym(bound)),
            );
            convs.push((kernel, bias));
        }
        let side = cfg.mask_size / 8;
        let flat = cfg.conv_channels[2] * side * side;
        let proj = Linear::new(store, "object.proj", flat, cfg.dim, rng);
        Ok(ObjectEncoder { convs, proj, mask_size: cfg.mask_size })
    }

    /// `[1, S, S]` binary mask to a `[1, D]` embedding row.
    pub fn encode_mask(&self, tape: &mut Tape, store: &ParamStore, mask: Var) -> Result<Var> {
        let shape = tape.value(mask).shape();
        if shape != [1, self.mask_size, self.mask_size] {
            return Err(Error::Config(format!(
                "mask encoder expects [1, {0}, {0}], got {shape:?}",
                self.mask_size
            )));
        }
        let mut x = mask;
        for &(kernel, bias) in &self.convs {
            let k = tape.param(store, kernel);
            let b = tape.param(store, bias);
            x = tape.conv2d(x, k, 2, 1)?;
            x = tape.add_chan(x, b)?;
            x = tape.relu(x)?;
        }
        let flat_len = tape.value(x).numel();
        let flat = tape.reshape(x, vec![1, flat_len])?;
        self.proj.forward(tape, store, flat)
    }
}
