//! Pretraining-to-finetuning weight transfer.
//!
//! A region-classification checkpoint carries the vision encoder, the
//! object-encoder CNN, and the relation decoder, plus its own
//! classification head. Finetuning reuses the shared modules unchanged,
//! introduces zero-initialized type embeddings and a freshly uniform-random
//! relation head, and drops the classification head.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, TaskMode};
use crate::params::ParamStore;
use crate::rng::Rng;

/// Names the finetune model initializes itself rather than inheriting.
fn is_fresh(name: &str) -> bool {
    name == "type_embed" || name.starts_with("rel_head.")
}

/// Convert a pretraining checkpoint into a relation-model checkpoint:
/// shared tensors pass through bit-identically, type embeddings start at
/// zero, the relation head starts uniform in ±sqrt(1/fan_in) seeded by
/// `seed`, and the pretraining classification head is dropped. Any shared
/// tensor missing from the input is a checkpoint error.
pub fn transfer_to_finetune(ckpt: &Checkpoint, seed: u64) -> Result<Checkpoint> {
    let cfg = ModelConfig::by_name(&ckpt.preset)?;
    let mut store = ParamStore::new();
    let mut rng = Rng::stream(seed, "transfer.init");
    Model::new(cfg, TaskMode::Relation, &mut store, &mut rng)?;

    let mut tensors = Vec::with_capacity(store.len());
    for p in store.iter() {
        if is_fresh(&p.name) {
            tensors.push((p.name.clone(), p.value.clone()));
            continue;
        }
        match ckpt.tensor(&p.name) {
            Some(t) => {
                if t.shape() != p.value.shape() {
                    return Err(Error::Checkpoint(format!(
                        "shared tensor {} has shape {:?}, finetune model expects {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )));
                }
                tensors.push((p.name.clone(), t.clone()));
            }
            None => {
                return Err(Error::Checkpoint(format!(
                    "pretraining checkpoint is missing shared tensor {}",
                    p.name
                )))
            }
        }
    }
    Ok(Checkpoint {
        version: ckpt.version,
        step: 0,
        seed,
        preset: ckpt.preset.clone(),
        tensors,
    })
}
