//! The experiment config file: one JSON document, unknown keys rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DomainSpec, DEFAULT_PROBE_PER_CLASS};
use crate::error::{Error, Result};
use crate::model::{TaskId, WidthConfig};
use crate::train::{milestones_for, TrainConfig, DESK_JOINT_EPOCHS, DESK_SINGLE_EPOCHS, SINGLE_MILESTONE_FRACTIONS};
use crate::weighting::Weighting;

/// Overrides the artifact root given in the config.
pub const CACHE_ENV: &str = "MDLLENS_CACHE";

fn default_trials() -> u32 {
    3
}
fn default_norm_k() -> usize {
    2
}
fn default_weightings() -> Vec<Weighting> {
    Weighting::ALL.to_vec()
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domains: Vec<DomainSpec>,
    /// Width multipliers.
    pub widths: Vec<f64>,
    #[serde(default = "default_norm_k")]
    pub norm_k: usize,
    #[serde(default = "default_weightings")]
    pub weightings: Vec<Weighting>,
    /// Domain groups trained jointly. Singletons add nothing: every domain
    /// always gets baselines.
    #[serde(default)]
    pub pairings: Vec<Vec<String>>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub arms: Arms,
    #[serde(default)]
    pub probe: ProbeConfig,
    /// Artifact root (catalog, checkpoints, logs).
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arms {
    #[serde(default = "default_true")]
    pub mdl: bool,
    #[serde(default)]
    pub transfer_learning: bool,
}

impl Default for Arms {
    fn default() -> Self {
        Arms { mdl: true, transfer_learning: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub per_class: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { per_class: DEFAULT_PROBE_PER_CLASS, seed: 0 }
    }
}

/// Shared optimizer settings plus per-kind schedules. Absent values keep the
/// trainer defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOverrides {
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub lr_decay: Option<f64>,
    pub cov_warmup: Option<u64>,
    pub eval_each_epoch: Option<bool>,
    pub single_epochs: usize,
    pub joint_epochs: usize,
    /// Defaults to `single_epochs`.
    pub finetune_epochs: Option<usize>,
    pub single_milestones: Option<Vec<usize>>,
    pub joint_milestones: Option<Vec<usize>>,
    pub finetune_milestones: Option<Vec<usize>>,
    /// Fine-tuning replaces the pretrained heads instead of keeping them.
    pub source_head_dropped: bool,
}

impl Default for TrainOverrides {
    fn default() -> Self {
        TrainOverrides {
            batch_size: None,
            lr: None,
            momentum: None,
            weight_decay: None,
            lr_decay: None,
            cov_warmup: None,
            eval_each_epoch: None,
            single_epochs: DESK_SINGLE_EPOCHS,
            joint_epochs: DESK_JOINT_EPOCHS,
            finetune_epochs: None,
            single_milestones: None,
            joint_milestones: None,
            finetune_milestones: None,
            source_head_dropped: true,
        }
    }
}

impl TrainOverrides {
    fn apply(&self, mut cfg: TrainConfig, milestones: &Option<Vec<usize>>) -> TrainConfig {
        cfg.batch_size = self.batch_size.unwrap_or(cfg.batch_size);
        cfg.lr = self.lr.unwrap_or(cfg.lr);
        cfg.momentum = self.momentum.unwrap_or(cfg.momentum);
        cfg.weight_decay = self.weight_decay.unwrap_or(cfg.weight_decay);
        cfg.lr_decay = self.lr_decay.unwrap_or(cfg.lr_decay);
        cfg.cov_warmup = self.cov_warmup.unwrap_or(cfg.cov_warmup);
        cfg.eval_each_epoch = self.eval_each_epoch.unwrap_or(cfg.eval_each_epoch);
        if let Some(m) = milestones {
            cfg.lr_milestones = m.clone();
        }
        cfg
    }

    pub fn single(&self, seed: u64) -> TrainConfig {
        self.apply(TrainConfig::single_domain(self.single_epochs, seed), &self.single_milestones)
    }

    pub fn joint(&self, seed: u64, weighting: Weighting) -> TrainConfig {
        self.apply(TrainConfig::joint(self.joint_epochs, seed, weighting), &self.joint_milestones)
    }

    /// The single-domain schedule stretched to the fine-tuning epochs.
    pub fn finetune(&self, seed: u64) -> TrainConfig {
        let epochs = self.finetune_epochs.unwrap_or(self.single_epochs);
        let cfg = TrainConfig::new(epochs, milestones_for(epochs, &SINGLE_MILESTONE_FRACTIONS), seed);
        self.apply(cfg, &self.finetune_milestones)
    }

    fn validate(&self) -> Result<()> {
        let prefix = |e: Error, kind: &str| match e {
            Error::Config { field, message } => Error::Config { field: format!("train.{kind}.{field}"), message },
            e => e,
        };
        self.single(0).validate().map_err(|e| prefix(e, "single"))?;
        self.joint(0, Weighting::Uniform).validate().map_err(|e| prefix(e, "joint"))?;
        self.finetune(0).validate().map_err(|e| prefix(e, "finetune"))?;
        Ok(())
    }
}

fn config_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingSource(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(config_err("domains", "at least one domain is required"));
        }
        let mut names = BTreeSet::new();
        for (i, d) in self.domains.iter().enumerate() {
            d.validate().map_err(|e| config_err(format!("domains[{i}]"), e.to_string()))?;
            if d.name.contains(['+', ' ']) {
                return Err(config_err(format!("domains[{i}].name"), "must not contain '+' or spaces"));
            }
            if !names.insert(d.name.as_str()) {
                return Err(config_err(format!("domains[{i}].name"), format!("duplicate domain {:?}", d.name)));
            }
            if d.image_size != self.domains[0].image_size {
                return Err(config_err(format!("domains[{i}].image_size"), "all domains must share one image size"));
            }
        }
        if self.widths.is_empty() {
            return Err(config_err("widths", "at least one width is required"));
        }
        let mut seen = BTreeSet::new();
        for (i, &w) in self.widths.iter().enumerate() {
            WidthConfig::with_norm_k(w, self.norm_k).map_err(|e| config_err(format!("widths[{i}]"), e.to_string()))?;
            if !seen.insert(w.to_bits()) {
                return Err(config_err(format!("widths[{i}]"), format!("duplicate width {w}")));
            }
        }
        let unique: BTreeSet<_> = self.weightings.iter().collect();
        if unique.len() != self.weightings.len() {
            return Err(config_err("weightings", "duplicate weighting"));
        }
        if self.arms.mdl && self.weightings.is_empty() && self.pairings.iter().any(|p| p.len() > 1) {
            return Err(config_err("weightings", "joint runs need at least one weighting"));
        }
        let mut groups = BTreeSet::new();
        for (i, p) in self.pairings.iter().enumerate() {
            if p.is_empty() {
                return Err(config_err(format!("pairings[{i}]"), "must name at least one domain"));
            }
            let set: BTreeSet<&str> = p.iter().map(String::as_str).collect();
            if set.len() != p.len() {
                return Err(config_err(format!("pairings[{i}]"), "repeats a domain"));
            }
            for (j, name) in p.iter().enumerate() {
                if !names.contains(name.as_str()) {
                    return Err(config_err(format!("pairings[{i}][{j}]"), format!("unknown domain {name:?}")));
                }
            }
            if !groups.insert(set) {
                return Err(config_err(format!("pairings[{i}]"), "duplicate pairing"));
            }
        }
        if self.trials < 1 {
            return Err(config_err("trials", "must be at least 1"));
        }
        if self.probe.per_class < 1 {
            return Err(config_err("probe.per_class", "must be at least 1"));
        }
        self.train.validate()
    }

    /// Where checkpoints, logs and the catalog live.
    pub fn artifact_root(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out_dir.clone(),
        }
    }

    pub fn width(&self, multiplier: f64) -> WidthConfig {
        WidthConfig { multiplier, norm_k: self.norm_k }
    }

    pub fn domain_spec(&self, name: &str) -> Option<&DomainSpec> {
        self.domains.iter().find(|d| d.name == name)
    }

    /// Task label of a domain: its position in `domains`.
    pub fn task_label(&self, name: &str) -> Option<TaskId> {
        self.domains.iter().position(|d| d.name == name).map(|i| i as TaskId)
    }

    /// Pairings of two or more domains, each in declared domain order.
    pub fn joint_pairings(&self) -> Vec<Vec<String>> {
        self.pairings
            .iter()
            .filter(|p| p.len() > 1)
            .map(|p| {
                let mut v = p.clone();
                v.sort_by_key(|n| self.task_label(n));
                v
            })
            .collect()
    }

    /// Ordered `(source, target)` pairs of domains that share a pairing.
    pub fn transfer_pairs(&self) -> Vec<(String, String)> {
        let mut out = BTreeSet::new();
        for p in self.joint_pairings() {
            for s in &p {
                for t in &p {
                    if s != t {
                        out.insert((self.task_label(s), self.task_label(t), s.clone(), t.clone()));
                    }
                }
            }
        }
        out.into_iter().map(|(_, _, s, t)| (s, t)).collect()
    }
}
