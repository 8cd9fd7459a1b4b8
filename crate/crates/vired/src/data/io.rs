//! Dataset directory layout: `manifest.json` plus `images/*.ppm`. The
//! manifest is COCO-flavored JSON; loading re-validates every reference so a
//! malformed dataset is rejected with the offending drawing named.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ppm::{read_ppm, write_ppm};
use super::{Annotation, Dataset, Drawing, RelationLabel};
use crate::error::{Error, Result};
use crate::object::BoundingBox;

#[derive(Serialize, Deserialize)]
struct ManifestImage {
    id: u64,
    file: String,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct ManifestAnnotation {
    id: u64,
    image_id: u64,
    bbox: [u32; 4],
    category_id: u32,
}

#[derive(Serialize, Deserialize)]
struct ManifestRelation {
    image_id: u64,
    circuit_id: u64,
    table_id: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    images: Vec<ManifestImage>,
    annotations: Vec<ManifestAnnotation>,
    relations: Vec<ManifestRelation>,
    categories: BTreeMap<String, String>,
}

fn image_file_name(id: u64) -> String {
    format!("{id:06}.ppm")
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir)?;
    let mut manifest = Manifest {
        images: Vec::new(),
        annotations: Vec::new(),
        relations: Vec::new(),
        categories: dataset
            .categories
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect(),
    };
    for d in &dataset.drawings {
        let file = image_file_name(d.id);
        write_ppm(&images_dir.join(&file), &d.image)?;
        manifest.images.push(ManifestImage {
            id: d.id,
            file,
            width: d.image.width,
            height: d.image.height,
        });
        for a in &d.annotations {
            manifest.annotations.push(ManifestAnnotation {
                id: a.id,
                image_id: d.id,
                bbox: [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                category_id: a.category_id,
            });
        }
        for r in &d.relations {
            manifest.relations.push(ManifestRelation {
                image_id: d.id,
                circuit_id: r.circuit_id,
                table_id: r.table_id,
            });
        }
    }
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Load a dataset directory. A directory without a manifest loads as an
/// empty dataset.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Ok(Dataset { drawings: Vec::new(), categories: BTreeMap::new() });
    }
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", manifest_path.display())))?;

    let mut categories = BTreeMap::new();
    for (k, v) in &manifest.categories {
        let id: u32 = k
            .parse()
            .map_err(|_| Error::Parse(format!("category key '{k}' is not an integer")))?;
        categories.insert(id, v.clone());
    }

    let mut drawings = Vec::with_capacity(manifest.images.len());
    for img in &manifest.images {
        let image = read_ppm(&dir.join("images").join(&img.file))?;
        if image.width != img.width || image.height != img.height {
            return Err(Error::Dataset(format!(
                "drawing {}: manifest says {}x{}, file is {}x{}",
                img.id, img.width, img.height, image.width, image.height
            )));
        }
        drawings.push(Drawing {
            id: img.id,
            image,
            annotations: Vec::new(),
            relations: Vec::new(),
        });
    }
    let index: BTreeMap<u64, usize> =
        drawings.iter().enumerate().map(|(i, d)| (d.id, i)).collect();
    if index.len() != drawings.len() {
        return Err(Error::Dataset("duplicate image ids in manifest".to_string()));
    }

    for a in &manifest.annotations {
        let &i = index.get(&a.image_id).ok_or_else(|| {
            Error::Dataset(format!(
                "annotation {} references missing drawing {}",
                a.id, a.image_id
            ))
        })?;
        if !categories.contains_key(&a.category_id) {
            return Err(Error::Dataset(format!(
                "drawing {}: annotation {} has unknown category {}",
                a.image_id, a.id, a.category_id
            )));
        }
        drawings[i].annotations.push(Annotation {
            id: a.id,
            bbox: BoundingBox::new(a.bbox[0], a.bbox[1], a.bbox[2], a.bbox[3]),
            category_id: a.category_id,
        });
    }
    for r in &manifest.relations {
        let &i = index.get(&r.image_id).ok_or_else(|| {
            Error::Dataset(format!("relation references missing drawing {}", r.image_id))
        })?;
        drawings[i].relations.push(RelationLabel {
            circuit_id: r.circuit_id,
            table_id: r.table_id,
        });
    }
    for d in &drawings {
        d.validate()?;
    }
    Ok(Dataset { drawings, categories })
}
