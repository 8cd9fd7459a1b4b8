//! AdamW with decoupled weight decay, and the warmup-then-decay LR schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;

/// AdamW keeps first/second moment buffers per parameter tensor and applies
/// weight decay directly to the weights rather than through the gradient.
pub struct AdamW {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_hyper(store, 0.9, 0.999, 1e-8, 1e-3)
    }

    pub fn with_hyper(
        store: &ParamStore,
        beta1: f32,
        beta2: f32,
        eps: f32,
        weight_decay: f32,
    ) -> Self {
        let m = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        let v = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        AdamW { beta1, beta2, eps, weight_decay, m, v, t: 0 }
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update from the gradients currently held in the store:
    /// `θ ← θ − lr·(m̂/(√v̂+ε) + wd·θ)` with bias-corrected moments.
    pub fn step(&mut self, store: &mut ParamStore, lr: f32) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer built for {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.t as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.t as i32);
        for (pi, p) in store.iter_mut().enumerate() {
            if p.grad.len() != p.value.numel() || self.m[pi].len() != p.grad.len() {
                return Err(Error::Contract(format!(
                    "gradient/moment shape mismatch for '{}'",
                    p.name
                )));
            }
            let (m, v) = (&mut self.m[pi], &mut self.v[pi]);
            let theta = p.value.data_mut();
            for i in 0..theta.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = (m[i] as f64 / bc1) as f32;
                let v_hat = (v[i] as f64 / bc2) as f32;
                theta[i] -=
                    lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * theta[i]);
            }
        }
        Ok(())
    }
}

/// Piecewise-linear learning rate: 0 → `base_lr` over the first
/// `warmup_frac` of training, then `base_lr` → `final_lr` over the rest.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub base_lr: f32,
    pub final_lr: f32,
    pub total_steps: u64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    /// Warmup occupies the first 20% of `total_steps`.
    pub fn new(base_lr: f32, final_lr: f32, total_steps: u64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("schedule: total_steps must be > 0".to_string()));
        }
        if base_lr <= 0.0 || final_lr < 0.0 {
            return Err(Error::Config(format!(
                "schedule: bad rates base={base_lr} final={final_lr}"
            )));
        }
        let warmup_steps = ((total_steps as f64) * 0.2).round() as u64;
        Ok(LrSchedule { base_lr, final_lr, total_steps, warmup_steps })
    }

    pub fn lr_at(&self, step: u64) -> Result<f32> {
        if step > self.total_steps {
            return Err(Error::Contract(format!(
                "lr_at: step {step} past total {}",
                self.total_steps
            )));
        }
        let lr = if step < self.warmup_steps {
            self.base_lr as f64 * step as f64 / self.warmup_steps as f64
        } else if self.total_steps == self.warmup_steps {
            self.base_lr as f64
        } else {
            let frac =
                (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
            self.base_lr as f64 + (self.final_lr as f64 - self.base_lr as f64) * frac
        };
        Ok(lr as f32)
    }
}
