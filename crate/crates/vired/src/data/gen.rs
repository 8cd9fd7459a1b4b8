//! Synthetic corpus generators.
//!
//! The relation corpus imitates electrical-engineering sheets: circuit
//! symbols (outlined boxes with internal wiring squiggles and terminal dots)
//! arranged in column bands, parameter tables (ruled grids) stacked beneath
//! the circuit they describe with a short leader line, plus unrelated orphan
//! tables and free-floating distractor strokes. The document corpus for
//! pretraining stacks five visually distinct block classes (text, title,
//! list, table, figure) in a single column.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{Annotation, Dataset, Drawing, RasterImage, RelationLabel};
use crate::error::{Error, Result};
use crate::object::BoundingBox;
use crate::rng::Rng;

/// Drawings whose requested instance count had to be reduced because the
/// layout ran out of room, since process start.
pub fn layout_reduction_count() -> u64 {
    LAYOUT_REDUCTIONS.load(Ordering::Relaxed)
}

static LAYOUT_REDUCTIONS: AtomicU64 = AtomicU64::new(0);

const INK: [u8; 3] = [24, 24, 32];
const LEADER: [u8; 3] = [96, 96, 110];
const DISTRACTOR: [u8; 3] = [70, 70, 70];
const WHITE: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub canvas: usize,
    /// Inclusive circuit count range per drawing.
    pub circuits: (u32, u32),
    /// Inclusive table count range per drawing.
    pub tables: (u32, u32),
    /// Probability that a circuit is described by exactly one table.
    pub one_to_one_weight: f64,
    /// Probability that a circuit is described by 2–3 stacked tables.
    pub one_to_many_weight: f64,
    /// Inclusive distractor stroke count range.
    pub distractors: (u32, u32),
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            canvas: 128,
            circuits: (4, 7),
            tables: (8, 13),
            one_to_one_weight: 0.77,
            one_to_many_weight: 0.23,
            distractors: (2, 5),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.canvas < 96 {
            return Err(Error::Config(format!(
                "canvas {} too small for the slot layout",
                self.canvas
            )));
        }
        if self.circuits.0 > self.circuits.1 || self.circuits.0 == 0 {
            return Err(Error::Config(format!(
                "empty circuit range {:?}",
                self.circuits
            )));
        }
        if self.tables.0 > self.tables.1 {
            return Err(Error::Config(format!("empty table range {:?}", self.tables)));
        }
        let sum = self.one_to_one_weight + self.one_to_many_weight;
        if (sum - 1.0).abs() > 1e-9 || self.one_to_one_weight < 0.0 || self.one_to_many_weight < 0.0
        {
            return Err(Error::Config(format!(
                "pattern weights {} + {} must sum to 1",
                self.one_to_one_weight, self.one_to_many_weight
            )));
        }
        if self.circuits.1 as usize > SLOT_COLS * SLOT_ROWS {
            return Err(Error::Config(format!(
                "at most {} circuits fit the slot grid",
                SLOT_COLS * SLOT_ROWS
            )));
        }
        Ok(())
    }
}

const MARGIN: usize = 8;
const SLOT_COLS: usize = 4;
const SLOT_ROWS: usize = 2;

// ── Raster painting helpers ─────────────────────────────────────────

fn draw_hline(img: &mut RasterImage, x0: usize, x1: usize, y: usize, rgb: [u8; 3]) {
    for x in x0..=x1 {
        img.set(x, y, rgb);
    }
}

fn draw_vline(img: &mut RasterImage, x: usize, y0: usize, y1: usize, rgb: [u8; 3]) {
    for y in y0..=y1 {
        img.set(x, y, rgb);
    }
}

pub(crate) fn draw_rect(img: &mut RasterImage, b: &BoundingBox, rgb: [u8; 3]) {
    let (x0, y0) = (b.x as usize, b.y as usize);
    let (x1, y1) = (x0 + b.w as usize - 1, y0 + b.h as usize - 1);
    draw_hline(img, x0, x1, y0, rgb);
    draw_hline(img, x0, x1, y1, rgb);
    draw_vline(img, x0, y0, y1, rgb);
    draw_vline(img, x1, y0, y1, rgb);
}

fn fill_rect(img: &mut RasterImage, b: &BoundingBox, rgb: [u8; 3]) {
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            img.set(x as usize, y as usize, rgb);
        }
    }
}

pub(crate) fn draw_line(img: &mut RasterImage, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
    // Bresenham over all octants.
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 {
            img.set(x as usize, y as usize, rgb);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Outlined box, a wiring squiggle inside, and two terminal dots.
fn paint_circuit(img: &mut RasterImage, b: &BoundingBox, rng: &mut Rng) {
    draw_rect(img, b, INK);
    let (x, y, w, h) = (b.x as i64, b.y as i64, b.w as i64, b.h as i64);
    // Zigzag across the interior.
    let segments = 3 + rng.below(3) as i64;
    let mut px = x + 3;
    let mut py = y + h / 2 + rng.below(3) as i64 - 1;
    for s in 1..=segments {
        let nx = x + 3 + (w - 6) * s / segments;
        let ny = y + 3 + rng.below((h - 6).max(1) as usize) as i64;
        draw_line(img, px, py, nx, ny, INK);
        (px, py) = (nx, ny);
    }
    // Terminal dots at the left and right edge midpoints.
    for (tx, ty) in [(x, y + h / 2), (x + w - 1, y + h / 2)] {
        for dy in -1..=0i64 {
            for dx in 0..=1i64 {
                if tx + dx >= 0 && ty + dy >= 0 {
                    img.set((tx + dx) as usize, (ty + dy) as usize, INK);
                }
            }
        }
    }
}

/// Ruled grid: outline plus interior column and row separators.
fn paint_table(img: &mut RasterImage, b: &BoundingBox, rng: &mut Rng) {
    draw_rect(img, b, INK);
    let (x0, y0) = (b.x as usize, b.y as usize);
    let (x1, y1) = (x0 + b.w as usize - 1, y0 + b.h as usize - 1);
    let cols = 2 + rng.below(2) as usize;
    for c in 1..=cols {
        let x = x0 + c * b.w as usize / (cols + 1);
        draw_vline(img, x, y0, y1, INK);
    }
    let rows = 1 + rng.below(2) as usize;
    for r in 1..=rows {
        let y = y0 + r * b.h as usize / (rows + 1);
        draw_hline(img, x0, x1, y, INK);
    }
}

fn boxes_intersect(a: &BoundingBox, b: &BoundingBox, pad: u32) -> bool {
    let ax1 = a.x + a.w + pad;
    let ay1 = a.y + a.h + pad;
    let bx1 = b.x + b.w + pad;
    let by1 = b.y + b.h + pad;
    a.x < bx1 && b.x < ax1 && a.y < by1 && b.y < ay1
}

/// Free-floating polyline that avoids every annotation box.
fn paint_distractor(img: &mut RasterImage, taken: &[BoundingBox], canvas: usize, rng: &mut Rng) {
    for _ in 0..40 {
        let w = rng.range_u32(10, 22);
        let h = rng.range_u32(10, 22);
        let hull = (canvas - 2 * MARGIN) as u32;
        if w >= hull || h >= hull {
            continue;
        }
        let x = MARGIN as u32 + rng.range_u32(0, hull - w);
        let y = MARGIN as u32 + rng.range_u32(0, hull - h);
        let region = BoundingBox::new(x, y, w, h);
        if taken.iter().any(|t| boxes_intersect(t, &region, 2)) {
            continue;
        }
        let points = 3 + rng.below(3);
        let mut px = (x + rng.range_u32(0, w - 1)) as i64;
        let mut py = (y + rng.range_u32(0, h - 1)) as i64;
        for _ in 0..points {
            let nx = (x + rng.range_u32(0, w - 1)) as i64;
            let ny = (y + rng.range_u32(0, h - 1)) as i64;
            draw_line(img, px, py, nx, ny, DISTRACTOR);
            (px, py) = (nx, ny);
        }
        return;
    }
}

// ── Relation corpus ─────────────────────────────────────────────────

struct Cluster {
    slot: usize,
    n_tables: usize,
}

/// Generate one drawing. Deterministic in (cfg, id): all randomness comes
/// from a stream derived from the config seed and the drawing id.
pub fn generate_drawing(cfg: &GeneratorConfig, id: u64) -> Result<Drawing> {
    cfg.validate()?;
    let mut rng = Rng::stream(cfg.seed, &format!("drawing.{id}"));
    let canvas = cfg.canvas;
    let slot_w = (canvas - 2 * MARGIN) / SLOT_COLS;
    let slot_h = (canvas - 2 * MARGIN) / SLOT_ROWS;

    let n_c = rng.range_u32(cfg.circuits.0, cfg.circuits.1) as usize;
    let mut n_t = rng.range_u32(cfg.tables.0, cfg.tables.1) as usize;

    // Assign each circuit its described-table count, one-to-one or
    // one-to-many, until the table pool runs dry.
    let mut pool = n_t;
    let mut clusters = Vec::with_capacity(n_c);
    let mut slots: Vec<usize> = (0..SLOT_COLS * SLOT_ROWS).collect();
    rng.shuffle(&mut slots);
    for ci in 0..n_c {
        let want = if rng.bernoulli(cfg.one_to_many_weight) {
            2 + rng.below(2) as usize
        } else {
            1
        };
        let take = want.min(pool);
        pool -= take;
        clusters.push(Cluster { slot: slots[ci], n_tables: take });
    }
    // Leftover tables become orphans in the unused slots (capacity 4 each).
    let free_slots = &slots[n_c..];
    let orphan_capacity = free_slots.len() * 4;
    if pool > orphan_capacity {
        LAYOUT_REDUCTIONS.fetch_add(1, Ordering::Relaxed);
        n_t -= pool - orphan_capacity;
        pool = orphan_capacity;
    }
    let mut orphans_per_slot = vec![0usize; free_slots.len()];
    for _ in 0..pool {
        loop {
            let s = rng.below(free_slots.len());
            if orphans_per_slot[s] < 4 {
                orphans_per_slot[s] += 1;
                break;
            }
        }
    }

    let mut image = RasterImage::filled(canvas, canvas, WHITE);
    let mut annotations = Vec::new();
    let mut relations = Vec::new();
    let mut next_id = 0u64;

    let slot_origin = |slot: usize| -> (u32, u32) {
        let col = slot % SLOT_COLS;
        let row = slot / SLOT_COLS;
        ((MARGIN + col * slot_w) as u32, (MARGIN + row * slot_h) as u32)
    };

    #[allow(clippy::too_many_arguments)]
    fn place_table_stack(
        image: &mut RasterImage,
        annotations: &mut Vec<Annotation>,
        rng: &mut Rng,
        next_id: &mut u64,
        slot_w: usize,
        x0: u32,
        mut y: u32,
        align_x: u32,
        count: usize,
    ) -> Vec<u64> {
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let w = rng.range_u32(18, 24);
            let h = rng.range_u32(7, 9);
            let max_x = x0 + slot_w as u32 - w;
            let x = (align_x + rng.below(5) as u32).saturating_sub(2).clamp(x0, max_x);
            let b = BoundingBox::new(x, y, w, h);
            paint_table(image, &b, rng);
            let tid = *next_id;
            *next_id += 1;
            annotations.push(Annotation { id: tid, bbox: b, category_id: 1 });
            ids.push(tid);
            y += h + 2 + rng.below(2) as u32;
        }
        ids
    }

    for cluster in &clusters {
        let (x0, y0) = slot_origin(cluster.slot);
        let cw = rng.range_u32(18, 24);
        let ch = rng.range_u32(13, 17);
        let cx = x0 + rng.below((slot_w as u32 - cw + 1) as usize) as u32;
        let cy = y0 + rng.below(3) as u32;
        let cbox = BoundingBox::new(cx, cy, cw, ch);
        paint_circuit(&mut image, &cbox, &mut rng);
        let cid = next_id;
        next_id += 1;
        annotations.push(Annotation { id: cid, bbox: cbox, category_id: 0 });

        let stack_y = cy + ch + 2 + rng.below(2) as u32;
        let table_ids = place_table_stack(
            &mut image,
            &mut annotations,
            &mut rng,
            &mut next_id,
            slot_w,
            x0,
            stack_y,
            cx,
            cluster.n_tables,
        );
        for &tid in &table_ids {
            relations.push(RelationLabel { circuit_id: cid, table_id: tid });
            // Leader line from the circuit's bottom edge to the table's top.
            let t = annotations.iter().find(|a| a.id == tid).expect("just placed");
            draw_line(
                &mut image,
                (cx + cw / 2) as i64,
                (cy + ch - 1) as i64,
                (t.bbox.x + t.bbox.w / 2) as i64,
                t.bbox.y as i64,
                LEADER,
            );
        }
    }

    for (si, &count) in orphans_per_slot.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let (x0, y0) = slot_origin(free_slots[si]);
        let y = y0 + rng.below(4) as u32;
        let align = x0 + rng.below(slot_w - 24 + 1) as u32;
        place_table_stack(
            &mut image,
            &mut annotations,
            &mut rng,
            &mut next_id,
            slot_w,
            x0,
            y,
            align,
            count,
        );
    }

    let taken: Vec<BoundingBox> = annotations.iter().map(|a| a.bbox).collect();
    let strokes = rng.range_u32(cfg.distractors.0, cfg.distractors.1);
    for _ in 0..strokes {
        paint_distractor(&mut image, &taken, canvas, &mut rng);
    }

    // Object order must carry no signal; shuffle the annotation list.
    rng.shuffle(&mut annotations);

    let drawing = Drawing { id, image, annotations, relations };
    drawing.validate()?;
    debug_assert_eq!(
        drawing.annotations.iter().filter(|a| a.category_id == 1).count(),
        n_t
    );
    Ok(drawing)
}

/// Generate a full relation dataset of `count` drawings.
pub fn generate_dataset(cfg: &GeneratorConfig, count: usize) -> Result<Dataset> {
    let mut drawings = Vec::with_capacity(count);
    for id in 0..count as u64 {
        drawings.push(generate_drawing(cfg, id)?);
    }
    Ok(Dataset { drawings, categories: Dataset::relation_categories() })
}

// ── Document corpus (pretraining) ───────────────────────────────────

fn paint_text_block(img: &mut RasterImage, b: &BoundingBox) {
    for (i, y) in (b.y + 1..b.y + b.h).step_by(3).enumerate() {
        let x1 = if i % 4 == 3 { b.x + b.w * 3 / 4 } else { b.x + b.w - 1 };
        draw_hline(img, b.x as usize, x1 as usize, y as usize, [60, 60, 60]);
    }
}

fn paint_title_block(img: &mut RasterImage, b: &BoundingBox) {
    fill_rect(img, b, [20, 20, 20]);
}

fn paint_list_block(img: &mut RasterImage, b: &BoundingBox) {
    // Bullet plus a dashed item line: dashes keep the texture distinct from
    // the solid rules of text blocks at every patch of the region.
    for y in (b.y + 1..b.y + b.h).step_by(5) {
        for dx in 0..2usize {
            img.set(b.x as usize + dx, y as usize, [60, 60, 60]);
            img.set(b.x as usize + dx, y as usize + 1, [60, 60, 60]);
        }
        let mut x = b.x + 4;
        while x + 3 < b.x + b.w {
            draw_hline(img, x as usize, x as usize + 2, y as usize, [60, 60, 60]);
            x += 6;
        }
    }
}

// Documents use a denser grid than the pin tables in relation drawings so
// that every patch of a table region contains crossing rules, not just the
// occasional vertical. Alternate cells are shaded, zebra style.
fn paint_grid_block(img: &mut RasterImage, b: &BoundingBox, rng: &mut Rng) {
    let pitch = 7 + rng.below(2) as u32;
    let (mut gy, mut row) = (b.y, 0u32);
    while gy < b.y + b.h {
        let ch = pitch.min(b.y + b.h - gy);
        let (mut gx, mut col) = (b.x, 0u32);
        while gx < b.x + b.w {
            let cw = pitch.min(b.x + b.w - gx);
            if (row + col) % 2 == 0 {
                fill_rect(img, &BoundingBox::new(gx, gy, cw, ch), [210, 210, 210]);
            }
            gx += pitch;
            col += 1;
        }
        gy += pitch;
        row += 1;
    }
    draw_rect(img, b, INK);
    let (x0, y0) = (b.x as usize, b.y as usize);
    let (x1, y1) = (x0 + b.w as usize - 1, y0 + b.h as usize - 1);
    let mut x = b.x + pitch;
    while x < b.x + b.w - 1 {
        draw_vline(img, x as usize, y0, y1, INK);
        x += pitch;
    }
    let mut y = b.y + pitch;
    while y < b.y + b.h - 1 {
        draw_hline(img, x0, x1, y as usize, INK);
        y += pitch;
    }
}

fn paint_figure_block(img: &mut RasterImage, b: &BoundingBox) {
    fill_rect(img, b, [170, 170, 170]);
    draw_rect(img, b, INK);
    let (x0, y0) = (b.x as i64, b.y as i64);
    let (x1, y1) = (x0 + b.w as i64 - 1, y0 + b.h as i64 - 1);
    draw_line(img, x0, y0, x1, y1, INK);
    draw_line(img, x0, y1, x1, y0, INK);
}

/// One synthetic five-class document page for masked-region pretraining.
/// Classes: 0 text, 1 title, 2 list, 3 table, 4 figure. No relations.
pub fn generate_document(canvas: usize, seed: u64, id: u64) -> Result<Drawing> {
    if canvas < 96 {
        return Err(Error::Config(format!("canvas {canvas} too small")));
    }
    let mut rng = Rng::stream(seed, &format!("document.{id}"));
    let mut image = RasterImage::filled(canvas, canvas, WHITE);
    let mut annotations = Vec::new();
    let hull_w = (canvas - 2 * MARGIN) as u32;
    let mut next_id = 0u64;

    // Title bar first.
    let tw = rng.range_u32(hull_w * 5 / 10, hull_w * 8 / 10);
    let th = rng.range_u32(7, 11);
    let tx = MARGIN as u32 + rng.range_u32(0, hull_w - tw);
    let mut y = MARGIN as u32 + rng.below(3) as u32;
    let title = BoundingBox::new(tx, y, tw, th);
    paint_title_block(&mut image, &title);
    annotations.push(Annotation { id: next_id, bbox: title, category_id: 1 });
    next_id += 1;
    y += th + 10 + rng.below(5) as u32;

    // Stack body blocks until the page runs out.
    let bottom = (canvas - MARGIN) as u32;
    while y + 14 <= bottom {
        let class = [0u32, 2, 3, 4][rng.weighted(&[0.40, 0.20, 0.25, 0.15])];
        // Class-typical geometry, as in real layouts: text spans the column,
        // lists are narrow, tables broad, figures narrow but tall.
        let (w, h) = match class {
            0 => (rng.range_u32(hull_w * 7 / 10, hull_w), rng.range_u32(16, 22)),
            2 => (rng.range_u32(hull_w * 3 / 10, hull_w * 5 / 10), rng.range_u32(14, 20)),
            3 => (rng.range_u32(hull_w * 55 / 100, hull_w * 8 / 10), rng.range_u32(18, 26)),
            _ => (rng.range_u32(hull_w * 3 / 10, hull_w * 55 / 100), rng.range_u32(22, 30)),
        };
        let h = h.min(bottom - y);
        if h < 14 {
            break;
        }
        let x = MARGIN as u32 + rng.range_u32(0, hull_w - w);
        let b = BoundingBox::new(x, y, w, h);
        match class {
            0 => paint_text_block(&mut image, &b),
            2 => paint_list_block(&mut image, &b),
            3 => paint_grid_block(&mut image, &b, &mut rng),
            _ => paint_figure_block(&mut image, &b),
        }
        annotations.push(Annotation { id: next_id, bbox: b, category_id: class });
        next_id += 1;
        // Generous leading: block textures should not share a patch row with
        // the neighbouring block under any 14 px grid phase too often.
        y += h + 10 + rng.below(5) as u32;
    }

    rng.shuffle(&mut annotations);
    let drawing = Drawing { id, image, annotations, relations: Vec::new() };
    drawing.validate()?;
    Ok(drawing)
}

/// Generate a document dataset for pretraining.
pub fn generate_document_dataset(canvas: usize, seed: u64, count: usize) -> Result<Dataset> {
    let mut drawings = Vec::with_capacity(count);
    for id in 0..count as u64 {
        drawings.push(generate_document(canvas, seed, id)?);
    }
    Ok(Dataset { drawings, categories: Dataset::document_categories() })
}
