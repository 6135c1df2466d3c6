use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{DecayKind, DecompositionSettings, LossMode, LossWeights, Similarity, SpanConvention};

/// Optimisation and objective settings of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_final: f64,
    pub warmup_epochs: usize,
    /// Global gradient-norm ceiling; `inf` disables clipping.
    pub clip_max_norm: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub decay: DecayKind,
    pub span: SpanConvention,
    pub similarity: Similarity,
    pub alpha_intensity: f64,
    pub alpha_gradient: f64,
    /// Checkpoint period in epochs; the last epoch is always saved.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            batch_size: 20,
            epochs: 250,
            lr_start: 1e-5,
            lr_peak: 6e-5,
            lr_final: 5e-6,
            warmup_epochs: 50,
            clip_max_norm: 1.0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss_mode: LossMode::Sds,
            decay: DecayKind::Gaussian,
            span: SpanConvention::Corner,
            similarity: Similarity::Pearson,
            alpha_intensity: w.intensity,
            alpha_gradient: w.gradient,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            intensity: self.alpha_intensity,
            gradient: self.alpha_gradient,
        }
    }

    pub fn decomposition(&self) -> DecompositionSettings {
        DecompositionSettings {
            decay: self.decay,
            span: self.span,
            similarity: self.similarity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.batch_size == 0 {
            errs.push("train.batch_size must be >= 1".to_string());
        }
        for (name, v) in [
            ("train.lr_start", self.lr_start),
            ("train.lr_peak", self.lr_peak),
            ("train.lr_final", self.lr_final),
            ("train.weight_decay", self.weight_decay),
            ("train.alpha_intensity", self.alpha_intensity),
            ("train.alpha_gradient", self.alpha_gradient),
        ] {
            if !v.is_finite() || v < 0.0 {
                errs.push(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.lr_start > self.lr_peak {
            errs.push(format!(
                "train.lr_start ({}) must not exceed train.lr_peak ({})",
                self.lr_start, self.lr_peak
            ));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            errs.push(format!(
                "train.warmup_epochs ({}) must be below train.epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.clip_max_norm.is_nan() || self.clip_max_norm <= 0.0 {
            errs.push(format!("train.clip_max_norm must be > 0, got {}", self.clip_max_norm));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            errs.push("train.beta1 and train.beta2 must lie in [0, 1)".to_string());
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            errs.push("train.adam_eps must be > 0".to_string());
        }
        if self.checkpoint_every == 0 {
            errs.push("train.checkpoint_every must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}
