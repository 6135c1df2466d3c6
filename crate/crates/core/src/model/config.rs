use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of encoder / CDM / decoder layers (N).
    pub num_layers: usize,
    /// Number of transition states per layer (K).
    pub num_states: usize,
    /// Channels produced by the input projection (C0).
    pub base_width: usize,
    /// Channel count per scale, `num_layers + 1` entries starting at `base_width`.
    pub channel_schedule: Vec<usize>,
    /// Attention heads in the state-wise attention.
    pub heads: usize,
    /// Hidden-width multiplier of the gated feed-forward network.
    pub gdfn_expansion: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            num_states: 7,
            base_width: 8,
            channel_schedule: vec![8, 16, 32, 64],
            heads: 4,
            gdfn_expansion: 2.0,
        }
    }
}

impl ModelConfig {
    /// Doubling channel schedule starting at `base_width`.
    pub fn with_shape(num_layers: usize, num_states: usize, base_width: usize, heads: usize) -> Self {
        Self {
            num_layers,
            num_states,
            base_width,
            channel_schedule: (0..=num_layers).map(|l| base_width << l).collect(),
            heads,
            gdfn_expansion: 2.0,
        }
    }

    /// Spatial size divisor imposed by the pooling stages.
    pub fn stride(&self) -> usize {
        1 << self.num_layers
    }

    pub fn channels(&self, layer: usize) -> usize {
        self.channel_schedule[layer]
    }

    /// Hidden width of the gated feed-forward network at `layer`.
    pub fn gdfn_hidden(&self, layer: usize) -> usize {
        ((self.channels(layer) as f64 * self.gdfn_expansion).round() as usize).max(1)
    }

    /// Collects every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.num_layers == 0 {
            errs.push("model.num_layers must be >= 1".to_string());
        }
        if self.num_layers > 12 {
            errs.push("model.num_layers must be <= 12".to_string());
        }
        if self.num_states == 0 {
            errs.push("model.num_states must be >= 1".to_string());
        }
        if self.base_width == 0 {
            errs.push("model.base_width must be >= 1".to_string());
        }
        if self.heads == 0 {
            errs.push("model.heads must be >= 1".to_string());
        }
        if !(self.gdfn_expansion.is_finite() && self.gdfn_expansion > 0.0) {
            errs.push(format!(
                "model.gdfn_expansion must be positive, got {}",
                self.gdfn_expansion
            ));
        }
        if self.channel_schedule.len() != self.num_layers + 1 {
            errs.push(format!(
                "model.channel_schedule must have num_layers + 1 = {} entries, got {}",
                self.num_layers + 1,
                self.channel_schedule.len()
            ));
        } else {
            if self.channel_schedule[0] != self.base_width {
                errs.push(format!(
                    "model.channel_schedule[0] = {} must equal model.base_width = {}",
                    self.channel_schedule[0], self.base_width
                ));
            }
            if self.channel_schedule.iter().any(|&c| c == 0) {
                errs.push("model.channel_schedule entries must be >= 1".to_string());
            }
            // Every scale's C*H*W must split into `heads` equal chunks; H and
            // W are arbitrary multiples of the stride, so C alone must divide.
            if self.heads > 0 {
                for (l, &c) in self.channel_schedule.iter().enumerate().skip(1) {
                    if c % self.heads != 0 {
                        errs.push(format!(
                            "model.channel_schedule[{l}] = {c} is not divisible by model.heads = {}",
                            self.heads
                        ));
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::config(format!("model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
