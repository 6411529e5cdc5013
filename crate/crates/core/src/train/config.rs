//! Optimizer and schedule settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weighting::{Weighting, DEFAULT_COV_WARMUP};

pub const DEFAULT_BATCH_SIZE: usize = 128;
pub const DEFAULT_LR: f64 = 0.1;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_LR_DECAY: f64 = 0.1;

pub const DESK_SINGLE_EPOCHS: usize = 60;
pub const DESK_JOINT_EPOCHS: usize = 75;
/// 140/250 and 210/250.
pub const SINGLE_MILESTONE_FRACTIONS: [f64; 2] = [0.56, 0.84];
/// 150/300 and 250/300.
pub const JOINT_MILESTONE_FRACTIONS: [f64; 2] = [0.50, 0.83];

/// Losses above this abort a run.
pub const DIVERGENCE_THRESHOLD: f64 = 100.0;

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_momentum() -> f64 {
    DEFAULT_MOMENTUM
}
fn default_weight_decay() -> f64 {
    DEFAULT_WEIGHT_DECAY
}
fn default_lr_decay() -> f64 {
    DEFAULT_LR_DECAY
}
fn default_cov_warmup() -> u64 {
    DEFAULT_COV_WARMUP
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epoch indices at which the learning rate is multiplied by `lr_decay`.
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default = "default_cov_warmup")]
    pub cov_warmup: u64,
    /// Evaluate every test split after each epoch (otherwise only after the last).
    #[serde(default = "default_true")]
    pub eval_each_epoch: bool,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr_milestones: Vec<usize>, seed: u64) -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            epochs,
            lr_milestones,
            lr_decay: DEFAULT_LR_DECAY,
            seed,
            weighting: Weighting::Uniform,
            cov_warmup: DEFAULT_COV_WARMUP,
            eval_each_epoch: true,
        }
    }

    /// Single-domain schedule with milestones at 56% and 84% of `epochs`.
    pub fn single_domain(epochs: usize, seed: u64) -> Self {
        Self::new(epochs, milestones_for(epochs, &SINGLE_MILESTONE_FRACTIONS), seed)
    }

    /// Joint schedule with milestones at 50% and 83% of `epochs`.
    pub fn joint(epochs: usize, seed: u64, weighting: Weighting) -> Self {
        Self { weighting, ..Self::new(epochs, milestones_for(epochs, &JOINT_MILESTONE_FRACTIONS), seed) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::Config { field: field.into(), message });
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        for (name, v) in [("lr", self.lr), ("lr_decay", self.lr_decay)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, format!("must be positive, got {v}"));
            }
        }
        for (name, v) in [("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name, format!("must be non-negative, got {v}"));
            }
        }
        if self.lr_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_milestones", format!("must be strictly increasing, got {:?}", self.lr_milestones));
        }
        if let Some(&last) = self.lr_milestones.last() {
            if last >= self.epochs {
                return bad("lr_milestones", format!("milestone {last} is not below epochs = {}", self.epochs));
            }
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let passed = self.lr_milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.lr_decay.powi(passed as i32)
    }
}

/// Rounds `fractions · epochs` to epoch indices, dropping any that fall
/// outside `1..epochs` or repeat.
pub fn milestones_for(epochs: usize, fractions: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for f in fractions {
        let m = (f * epochs as f64).round() as usize;
        if m >= 1 && m < epochs && out.last().is_none_or(|&l| m > l) {
            out.push(m);
        }
    }
    out
}
