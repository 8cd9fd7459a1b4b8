//! Geometric training augmentation.
//!
//! Every transform moves the image and its annotation boxes together, so
//! labels stay aligned by construction. Training applies, in order: a
//! horizontal flip (p = 0.2), a vertical flip (p = 0.2), a uniformly chosen
//! square-symmetry element, and a fixed-size crop positioned to contain
//! every annotation box. Evaluation applies none of these.

use std::sync::atomic::{AtomicU64, Ordering};

use super::{Drawing, RasterImage};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Crops that could not contain every box and fell back to scaling the
/// whole drawing down to the window size, since process start.
pub fn crop_fallback_count() -> u64 {
    CROP_FALLBACKS.load(Ordering::Relaxed)
}

static CROP_FALLBACKS: AtomicU64 = AtomicU64::new(0);

/// Mirror left-right: pixel column x maps to W-1-x, a box keeps its width
/// and its left edge moves to W - x - w.
pub fn flip_h(d: &Drawing) -> Drawing {
    let (w, h) = (d.image.width, d.image.height);
    let mut image = RasterImage::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            image.set(w - 1 - x, y, d.image.get(x, y));
        }
    }
    let mut out = d.clone();
    out.image = image;
    for a in &mut out.annotations {
        a.bbox.x = w as u32 - a.bbox.x - a.bbox.w;
    }
    out
}

/// Mirror top-bottom.
pub fn flip_v(d: &Drawing) -> Drawing {
    let (w, h) = (d.image.width, d.image.height);
    let mut image = RasterImage::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            image.set(x, h - 1 - y, d.image.get(x, y));
        }
    }
    let mut out = d.clone();
    out.image = image;
    for a in &mut out.annotations {
        a.bbox.y = h as u32 - a.bbox.y - a.bbox.h;
    }
    out
}

/// Rotate a square drawing 90° clockwise: pixel (x, y) lands at
/// (S-1-y, x); a box (x, y, w, h) becomes (S-y-h, x, h, w).
pub fn rot90(d: &Drawing) -> Drawing {
    let s = d.image.width;
    assert_eq!(s, d.image.height, "rotation requires a square canvas");
    let mut image = RasterImage::filled(s, s, [0, 0, 0]);
    for y in 0..s {
        for x in 0..s {
            image.set(s - 1 - y, x, d.image.get(x, y));
        }
    }
    let mut out = d.clone();
    out.image = image;
    for a in &mut out.annotations {
        let b = a.bbox;
        a.bbox.x = s as u32 - b.y - b.h;
        a.bbox.y = b.x;
        a.bbox.w = b.h;
        a.bbox.h = b.w;
    }
    out
}

/// Apply the k-th of the eight square symmetries: k in 0..4 rotates by
/// k quarter turns; k in 4..8 mirrors horizontally first, then rotates.
pub fn d4_element(d: &Drawing, k: usize) -> Drawing {
    assert!(k < 8, "square symmetry index {k} out of range");
    let mut out = if k >= 4 { flip_h(d) } else { d.clone() };
    for _ in 0..k % 4 {
        out = rot90(&out);
    }
    out
}

/// Scale the whole drawing down (or up) to `target` per side with
/// nearest-neighbour resampling. Box edges scale by the same ratio,
/// rounding outward so nothing is clipped away.
pub fn scale_to_fit(d: &Drawing, target: usize) -> Result<Drawing> {
    let s = d.image.width;
    if s != d.image.height {
        return Err(Error::Contract(format!(
            "scaling requires a square canvas, got {}x{}",
            d.image.width, d.image.height
        )));
    }
    let mut out = d.clone();
    out.image = d.image.resize_nearest(target);
    let (t, s) = (target as u64, s as u64);
    for a in &mut out.annotations {
        let x0 = (a.bbox.x as u64 * t) / s;
        let y0 = (a.bbox.y as u64 * t) / s;
        let x1 = (((a.bbox.x + a.bbox.w) as u64 * t).div_ceil(s)).min(t);
        let y1 = (((a.bbox.y + a.bbox.h) as u64 * t).div_ceil(s)).min(t);
        a.bbox.x = x0 as u32;
        a.bbox.y = y0 as u32;
        a.bbox.w = (x1 - x0).max(1) as u32;
        a.bbox.h = (y1 - y0).max(1) as u32;
    }
    Ok(out)
}

/// Cut a `window`-sized square that contains every annotation box, at a
/// position sampled uniformly from the feasible range. When no position
/// can contain them all the drawing is scaled to the window instead.
pub fn crop_containing_boxes(d: &Drawing, window: usize, rng: &mut Rng) -> Result<Drawing> {
    let s = d.image.width;
    if s != d.image.height {
        return Err(Error::Contract(format!(
            "cropping requires a square canvas, got {}x{}",
            d.image.width, d.image.height
        )));
    }
    if window == 0 || window > s {
        return Err(Error::Config(format!(
            "crop window {window} invalid for a {s}px canvas"
        )));
    }
    let w = window as u32;
    let (mut min_x, mut min_y) = (s as u32, s as u32);
    let (mut max_x, mut max_y) = (0u32, 0u32);
    for a in &d.annotations {
        min_x = min_x.min(a.bbox.x);
        min_y = min_y.min(a.bbox.y);
        max_x = max_x.max(a.bbox.x + a.bbox.w);
        max_y = max_y.max(a.bbox.y + a.bbox.h);
    }
    // With no annotations the sentinels leave the full range feasible.
    if max_x.saturating_sub(min_x) > w || max_y.saturating_sub(min_y) > w {
        CROP_FALLBACKS.fetch_add(1, Ordering::Relaxed);
        return scale_to_fit(d, window);
    }
    let sample = |rng: &mut Rng, lo: u32, hi: u32| lo + rng.below((hi - lo + 1) as usize) as u32;
    let x_lo = max_x.saturating_sub(w);
    let x_hi = min_x.min(s as u32 - w);
    let y_lo = max_y.saturating_sub(w);
    let y_hi = min_y.min(s as u32 - w);
    if x_lo > x_hi || y_lo > y_hi {
        CROP_FALLBACKS.fetch_add(1, Ordering::Relaxed);
        return scale_to_fit(d, window);
    }
    let x0 = sample(rng, x_lo, x_hi);
    let y0 = sample(rng, y_lo, y_hi);

    let mut image = RasterImage::filled(window, window, [0, 0, 0]);
    for y in 0..window {
        for x in 0..window {
            image.set(x, y, d.image.get(x0 as usize + x, y0 as usize + y));
        }
    }
    let mut out = d.clone();
    out.image = image;
    for a in &mut out.annotations {
        a.bbox.x -= x0;
        a.bbox.y -= y0;
    }
    Ok(out)
}

/// The full training pipeline; evaluation returns the drawing unchanged.
pub fn augment(d: &Drawing, window: usize, training: bool, rng: &mut Rng) -> Result<Drawing> {
    if !training {
        return Ok(d.clone());
    }
    let mut out = d.clone();
    if rng.bernoulli(0.2) {
        out = flip_h(&out);
    }
    if rng.bernoulli(0.2) {
        out = flip_v(&out);
    }
    out = d4_element(&out, rng.below(8));
    crop_containing_boxes(&out, window, rng)
}
