use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub total_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.025,
            momentum: 0.9,
            weight_decay: 5e-4,
            total_epochs: 40,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config(format!("{prefix}.base_lr"), "must be > 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("{prefix}.weight_decay"), "must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("{prefix}.momentum"), "must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate: `base_lr * 0.5 * (1 + cos(pi * epoch / total))`.
pub fn cosine_lr(epoch: usize, cfg: &SgdConfig) -> Result<f64> {
    if epoch > cfg.total_epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside [0, {}]",
            cfg.total_epochs
        )));
    }
    if cfg.total_epochs == 0 {
        return Ok(cfg.base_lr);
    }
    let t = epoch as f64 / cfg.total_epochs as f64;
    Ok(cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct SgdState {
    buffers: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One SGD step: `buf = momentum * buf + g; p -= lr * (buf + weight_decay * p)`.
///
/// All gradients are checked before any parameter is touched, so a
/// non-finite gradient leaves `params` unchanged.
pub fn sgd_step(
    params: &mut [Tensor],
    grads: &[Vec<f64>],
    lr: f64,
    cfg: &SgdConfig,
    state: &mut SgdState,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() {
            return Err(Error::shape(
                "sgd_step",
                format!("tensor #{i} has {} elements, gradient {}", p.numel(), g.len()),
            ));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient in tensor #{i} at element {j}"
            )));
        }
    }
    if state.buffers.len() != params.len() {
        state.buffers = params.iter().map(|p| vec![0.0; p.numel()]).collect();
    }
    for ((p, g), buf) in params.iter_mut().zip(grads).zip(&mut state.buffers) {
        for ((w, gv), b) in p.data_mut().iter_mut().zip(g).zip(buf.iter_mut()) {
            *b = cfg.momentum * *b + gv;
            *w -= lr * (*b + cfg.weight_decay * *w);
        }
    }
    Ok(())
}
