//! End-to-end relation prediction on engineering drawings: a small autodiff
//! tensor core, a ViT-style vision encoder, mask-based object tokens, a
//! cross-attention decoder with a pairwise relation head, plus the synthetic
//! data pipeline, metrics, trainer, and FLOPs model that tie it together.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod decoder;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pretrain;
pub mod object;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod trainer;
pub mod tensor;
pub mod vision;

pub use error::{Error, Result};
