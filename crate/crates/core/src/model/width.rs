//! Width scaling and adaptive group counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel widths of the three residual stages at multiplier 1.
pub const BASE_CHANNELS: [usize; 3] = [16, 32, 64];

/// Upper bound on GroupNorm groups.
pub const MAX_GROUPS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthConfig {
    pub multiplier: f64,
    #[serde(default = "default_norm_k")]
    pub norm_k: usize,
}

fn default_norm_k() -> usize {
    2
}

impl WidthConfig {
    pub fn new(multiplier: f64) -> Result<Self> {
        Self::with_norm_k(multiplier, default_norm_k())
    }

    pub fn with_norm_k(multiplier: f64, norm_k: usize) -> Result<Self> {
        let cfg = Self { multiplier, norm_k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.multiplier.is_finite() && self.multiplier > 0.0) {
            return Err(Error::invalid(format!("width multiplier must be positive, got {}", self.multiplier)));
        }
        if self.norm_k == 0 {
            return Err(Error::invalid("norm_k must be at least 1"));
        }
        Ok(())
    }

    /// `round(base × multiplier)`, halves rounded up, never below 1.
    pub fn channels(&self, base: usize) -> usize {
        ((base as f64 * self.multiplier + 0.5).floor() as usize).max(1)
    }

    pub fn stage_channels(&self) -> [usize; 3] {
        BASE_CHANNELS.map(|b| self.channels(b))
    }

    /// Dimension of the pooled penultimate features.
    pub fn feature_dim(&self) -> usize {
        self.channels(BASE_CHANNELS[2])
    }

    /// Short label like `0.25x`, used in run ids and file names.
    pub fn label(&self) -> String {
        format!("{}x", self.multiplier)
    }
}

/// `max(1, min(32, ⌊channels / k⌋))`.
pub fn group_count(channels: usize, k: usize) -> usize {
    (channels / k.max(1)).min(MAX_GROUPS).max(1)
}

/// Groups actually used at a normalization site: the largest divisor of
/// `channels` that does not exceed [`group_count`].
pub fn norm_groups(channels: usize, k: usize) -> usize {
    let target = group_count(channels, k);
    (1..=target).rev().find(|g| channels % g == 0).unwrap_or(1)
}
