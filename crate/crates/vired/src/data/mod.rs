//! Synthetic drawing corpus: generation, augmentation, serialization, and
//! train/validation splitting.

pub mod augment;
pub mod gen;
pub mod io;
pub mod ppm;

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::object::BoundingBox;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Interleaved 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RasterImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        RasterImage { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    /// Nearest-neighbor resample to a square target. Source pixel for output
    /// index `t` is `floor((2t+1)·src / (2·target))` — the pixel whose center
    /// is nearest under the uniform grid mapping.
    pub fn resize_nearest(&self, target: usize) -> RasterImage {
        let mut out = RasterImage::filled(target, target, [0, 0, 0]);
        for ty in 0..target {
            let sy = ((2 * ty + 1) * self.height) / (2 * target);
            for tx in 0..target {
                let sx = ((2 * tx + 1) * self.width) / (2 * target);
                out.set(tx, ty, self.get(sx.min(self.width - 1), sy.min(self.height - 1)));
            }
        }
        out
    }

    /// `[3, S, S]` float tensor in [0,1], resized if needed.
    pub fn to_tensor(&self, target: usize) -> Tensor {
        let src = if self.width == target && self.height == target {
            self.clone()
        } else {
            self.resize_nearest(target)
        };
        let mut data = vec![0.0f32; 3 * target * target];
        for y in 0..target {
            for x in 0..target {
                let px = src.get(x, y);
                for ch in 0..3 {
                    data[(ch * target + y) * target + x] = px[ch] as f32 / 255.0;
                }
            }
        }
        Tensor::new(vec![3, target, target], data).expect("sized above")
    }
}

/// One labeled instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Annotation {
    pub id: u64,
    pub bbox: BoundingBox,
    pub category_id: u32,
}

/// Ground-truth "table describes circuit" edge, by annotation id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelationLabel {
    pub circuit_id: u64,
    pub table_id: u64,
}

/// One image with its annotations and relation edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Drawing {
    pub id: u64,
    pub image: RasterImage,
    pub annotations: Vec<Annotation>,
    pub relations: Vec<RelationLabel>,
}

impl Drawing {
    pub fn annotation(&self, id: u64) -> Option<&Annotation> {
        self.annotations.iter().find(|a| a.id == id)
    }

    /// Structural checks: unique annotation ids, boxes in bounds, every
    /// relation joining an existing circuit (category 0) and table (1).
    pub fn validate(&self) -> Result<()> {
        let side = self.image.width.min(self.image.height) as u32;
        for a in &self.annotations {
            a.bbox.validate(side).map_err(|e| {
                Error::Dataset(format!("drawing {}: annotation {}: {e}", self.id, a.id))
            })?;
            if self.annotations.iter().filter(|b| b.id == a.id).count() != 1 {
                return Err(Error::Dataset(format!(
                    "drawing {}: duplicate annotation id {}",
                    self.id, a.id
                )));
            }
        }
        for r in &self.relations {
            let c = self.annotation(r.circuit_id).ok_or_else(|| {
                Error::Dataset(format!(
                    "drawing {}: relation references missing annotation {}",
                    self.id, r.circuit_id
                ))
            })?;
            let t = self.annotation(r.table_id).ok_or_else(|| {
                Error::Dataset(format!(
                    "drawing {}: relation references missing annotation {}",
                    self.id, r.table_id
                ))
            })?;
            if c.category_id != 0 || t.category_id != 1 {
                return Err(Error::Dataset(format!(
                    "drawing {}: relation ({}, {}) joins categories ({}, {}), expected (0, 1)",
                    self.id, r.circuit_id, r.table_id, c.category_id, t.category_id
                )));
            }
            if self
                .relations
                .iter()
                .filter(|o| o.circuit_id == r.circuit_id && o.table_id == r.table_id)
                .count()
                != 1
            {
                return Err(Error::Dataset(format!(
                    "drawing {}: duplicate relation ({}, {})",
                    self.id, r.circuit_id, r.table_id
                )));
            }
        }
        Ok(())
    }
}

/// A set of drawings plus the category vocabulary they are labeled against.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub drawings: Vec<Drawing>,
    pub categories: BTreeMap<u32, String>,
}

impl Dataset {
    pub fn relation_categories() -> BTreeMap<u32, String> {
        [(0, "circuit".to_string()), (1, "table".to_string())].into()
    }

    pub fn document_categories() -> BTreeMap<u32, String> {
        [
            (0, "text".to_string()),
            (1, "title".to_string()),
            (2, "list".to_string()),
            (3, "table".to_string()),
            (4, "figure".to_string()),
        ]
        .into()
    }

    pub fn len(&self) -> usize {
        self.drawings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drawings.is_empty()
    }
}

/// Deterministic drawing-level split. The train side gets
/// `round(train_fraction · N)` drawings of a seed-shuffled order.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if dataset.is_empty() {
        return Err(Error::Contract("split of an empty dataset".to_string()));
    }
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!(
            "train fraction {train_fraction} outside [0,1]"
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = Rng::stream(seed, "split");
    rng.shuffle(&mut order);
    let n_train = (train_fraction * dataset.len() as f64 + 0.5).floor() as usize;
    let take = |idx: &[usize]| Dataset {
        drawings: idx.iter().map(|&i| dataset.drawings[i].clone()).collect(),
        categories: dataset.categories.clone(),
    };
    Ok((take(&order[..n_train]), take(&order[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_drawing(id: u64) -> Drawing {
        Drawing {
            id,
            image: RasterImage::filled(16, 16, [255, 255, 255]),
            annotations: vec![
                Annotation { id: 0, bbox: BoundingBox::new(1, 1, 4, 4), category_id: 0 },
                Annotation { id: 1, bbox: BoundingBox::new(8, 8, 4, 4), category_id: 1 },
            ],
            relations: vec![RelationLabel { circuit_id: 0, table_id: 1 }],
        }
    }

    fn dataset_of(n: u64) -> Dataset {
        Dataset {
            drawings: (0..n).map(tiny_drawing).collect(),
            categories: Dataset::relation_categories(),
        }
    }

    #[test]
    fn split_sizes_match_rounding() {
        let (train, valid) = split(&dataset_of(283), 0.9, 1).unwrap();
        assert_eq!(train.len(), 255);
        assert_eq!(valid.len(), 28);
        let (train, valid) = split(&dataset_of(10), 0.9, 1).unwrap();
        assert_eq!((train.len(), valid.len()), (9, 1));
    }

    #[test]
    fn split_is_a_partition_and_deterministic() {
        let ds = dataset_of(41);
        let (t1, v1) = split(&ds, 0.8, 7).unwrap();
        let (t2, v2) = split(&ds, 0.8, 7).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        let mut ids: Vec<u64> = t1.drawings.iter().chain(&v1.drawings).map(|d| d.id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..41).collect::<Vec<_>>());
        let (t3, _) = split(&ds, 0.8, 8).unwrap();
        assert_ne!(
            t1.drawings.iter().map(|d| d.id).collect::<Vec<_>>(),
            t3.drawings.iter().map(|d| d.id).collect::<Vec<_>>(),
            "different seeds should shuffle differently"
        );
    }

    #[test]
    fn split_rejects_empty() {
        let ds = Dataset { drawings: vec![], categories: Dataset::relation_categories() };
        assert!(split(&ds, 0.9, 1).is_err());
    }

    #[test]
    fn validation_catches_broken_references() {
        let mut d = tiny_drawing(0);
        d.relations.push(RelationLabel { circuit_id: 99, table_id: 1 });
        assert!(d.validate().is_err());

        let mut d = tiny_drawing(0);
        d.relations[0] = RelationLabel { circuit_id: 1, table_id: 0 }; // swapped categories
        assert!(d.validate().is_err());

        let mut d = tiny_drawing(0);
        d.annotations[1].id = 0; // duplicate id
        assert!(d.validate().is_err());

        assert!(tiny_drawing(0).validate().is_ok());
    }

    #[test]
    fn resize_nearest_identity_and_halving() {
        let mut img = RasterImage::filled(4, 4, [0, 0, 0]);
        for y in 0..4 {
            for x in 0..4 {
                img.set(x, y, [(y * 4 + x) as u8 * 10, 0, 0]);
            }
        }
        assert_eq!(img.resize_nearest(4), img);
        let half = img.resize_nearest(2);
        // Output centers at 0.5,1.5 of 2 map to source 1 and 3.
        assert_eq!(half.get(0, 0)[0], 50);
        assert_eq!(half.get(1, 0)[0], 70);
        assert_eq!(half.get(0, 1)[0], 130);
        assert_eq!(half.get(1, 1)[0], 150);
    }

    #[test]
    fn tensor_conversion_scales_to_unit_range() {
        let img = RasterImage::filled(8, 8, [255, 0, 128]);
        let t = img.to_tensor(8);
        assert_eq!(t.shape(), &[3, 8, 8]);
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[64], 0.0);
        assert!((t.data()[128] - 128.0 / 255.0).abs() < 1e-6);
    }
}
