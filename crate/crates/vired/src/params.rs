//! Named learnable parameters with gradient accumulation buffers.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Accumulated dLoss/dParam, same length as `value`.
    pub grad: Vec<f32>,
}

/// Registry of all learnable tensors of one model, in registration order.
/// Registration order is deterministic, which makes checkpoints and optimizer
/// trajectories reproducible.
#[derive(Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = vec![0.0; value.numel()];
        self.params.push(Param { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f32) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f32]) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.len() != grad.len() {
            return Err(Error::Contract(format!(
                "gradient length {} does not match parameter {} ({})",
                grad.len(),
                p.name,
                p.grad.len()
            )));
        }
        for (a, b) in p.grad.iter_mut().zip(grad) {
            *a += b;
        }
        Ok(())
    }

    /// Overwrite parameter values from `(name, tensor)` pairs. Every
    /// parameter must be present with a matching shape; unknown names are
    /// rejected so a checkpoint and a model cannot silently disagree.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        for (name, t) in tensors {
            match self.params.iter_mut().find(|p| &p.name == name) {
                Some(p) => {
                    if p.value.shape() != t.shape() {
                        return Err(Error::Checkpoint(format!(
                            "tensor {} has shape {:?}, model expects {:?}",
                            name,
                            t.shape(),
                            p.value.shape()
                        )));
                    }
                    p.value = t.clone();
                }
                None => {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} does not exist in the model"
                    )))
                }
            }
        }
        for p in &self.params {
            if !tensors.iter().any(|(n, _)| n == &p.name) {
                return Err(Error::Checkpoint(format!(
                    "missing expected tensor {}",
                    p.name
                )));
            }
        }
        Ok(())
    }
}
