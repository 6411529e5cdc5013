//! The run catalog: one row per training run, persisted atomically.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::model::WidthConfig;
use crate::seed::derive_seed;
use crate::train::TrainConfig;
use crate::weighting::Weighting;

pub const CATALOG_FILE: &str = "catalog.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Single,
    Joint,
    Finetune,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Single => "single",
            RunKind::Joint => "joint",
            RunKind::Finetune => "finetune",
        }
    }
}

impl fmt::Display for RunKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRow {
    pub run_id: String,
    pub kind: RunKind,
    /// Single: the domain. Joint: the group in task order. Finetune:
    /// `[source, target]`.
    pub pairing: Vec<String>,
    pub width: f64,
    pub weighting: Option<Weighting>,
    pub trial: u32,
    pub seed: u64,
    /// Hash of everything that determines the run's outcome besides the
    /// seed (training config, domain specs, width); a changed config never
    /// reuses stale artifacts.
    pub config_digest: String,
    /// Relative to the artifact root.
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub status: RunStatus,
    #[serde(default)]
    pub checkpoint_sha256: Option<String>,
    #[serde(default)]
    pub diagnostic: Option<String>,
}

impl RunRow {
    pub fn run_dir(&self) -> PathBuf {
        PathBuf::from("runs").join(&self.run_id)
    }

    /// Test predictions of this run on `domain`, relative to the root.
    pub fn predictions(&self, domain: &str) -> PathBuf {
        self.run_dir().join("pred").join(format!("{domain}.jsonl"))
    }

    /// Probe-set representations (single runs only).
    pub fn representations(&self) -> PathBuf {
        self.run_dir().join("reps.csv")
    }

    /// Domains this run is evaluated on.
    pub fn eval_domains(&self) -> &[String] {
        match self.kind {
            RunKind::Finetune => &self.pairing[1..],
            _ => &self.pairing,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    fn reset(&mut self) {
        self.status = RunStatus::Pending;
        self.checkpoint_sha256 = None;
        self.diagnostic = None;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunCatalog {
    pub rows: Vec<RunRow>,
}

impl RunCatalog {
    pub fn get(&self, run_id: &str) -> Option<&RunRow> {
        self.rows.iter().find(|r| r.run_id == run_id)
    }

    pub fn get_mut(&mut self, run_id: &str) -> Option<&mut RunRow> {
        self.rows.iter_mut().find(|r| r.run_id == run_id)
    }

    pub fn count(&self, status: RunStatus) -> usize {
        self.rows.iter().filter(|r| r.status == status).count()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("catalog serializes");
        s.push('\n');
        s
    }

    pub fn path(root: &Path) -> PathBuf {
        root.join(CATALOG_FILE)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        crate::model::checkpoint::write_atomic(&Self::path(root), self.to_json().as_bytes())
    }

    /// `None` when the root holds no catalog yet.
    pub fn load(root: &Path) -> Result<Option<Self>> {
        let path = Self::path(root);
        if !path.exists() {
            return Ok(None);
        }
        let cat: RunCatalog = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        Ok(Some(cat))
    }

    /// Brings `planned` rows into the catalog. A row already present with the
    /// same seed and digest keeps its status; anything else is (re)set to
    /// pending. Rows of other configs sharing the root are left alone.
    pub fn merge_plan(&mut self, planned: &RunCatalog) {
        for p in &planned.rows {
            match self.get_mut(&p.run_id) {
                Some(r) if r.seed == p.seed && r.config_digest == p.config_digest => {}
                Some(r) => {
                    *r = p.clone();
                    r.reset();
                }
                None => self.rows.push(p.clone()),
            }
        }
    }
}

fn width_label(w: f64) -> String {
    format!("{w}x")
}

/// Stable seed of a run: a hash of its identifying fields.
pub fn run_seed(trial: u32, kind: RunKind, pairing: &[String], width: f64, weighting: Option<Weighting>) -> u64 {
    derive_seed([
        trial.to_string(),
        kind.to_string(),
        pairing.join("+"),
        width_label(width),
        weighting.map_or("-".to_string(), |w| w.to_string()),
    ])
}

pub fn run_id(kind: RunKind, pairing: &[String], width: f64, weighting: Option<Weighting>, trial: u32) -> String {
    let group = match kind {
        RunKind::Finetune => pairing.join("-to-"),
        _ => pairing.join("+"),
    };
    let wt = weighting.map_or(String::new(), |w| format!("_{w}"));
    format!("{kind}_{group}_w{}{wt}_t{trial}", width_label(width))
}

#[derive(Serialize)]
struct DigestInput<'a> {
    kind: RunKind,
    train: &'a TrainConfig,
    domains: Vec<&'a crate::data::DomainSpec>,
    width: WidthConfig,
    probe: Option<&'a super::config::ProbeConfig>,
    source_head_dropped: Option<bool>,
}

/// The training config a row runs with.
pub fn train_config(cfg: &ExperimentConfig, row: &RunRow) -> TrainConfig {
    match row.kind {
        RunKind::Single => cfg.train.single(row.seed),
        RunKind::Joint => cfg.train.joint(row.seed, row.weighting.unwrap_or_default()),
        RunKind::Finetune => cfg.train.finetune(row.seed),
    }
}

fn digest(cfg: &ExperimentConfig, row: &RunRow) -> String {
    let input = DigestInput {
        kind: row.kind,
        train: &train_config(cfg, row),
        domains: row.pairing.iter().filter_map(|d| cfg.domain_spec(d)).collect(),
        width: cfg.width(row.width),
        probe: (row.kind == RunKind::Single).then_some(&cfg.probe),
        source_head_dropped: (row.kind == RunKind::Finetune).then_some(cfg.train.source_head_dropped),
    };
    let bytes = serde_json::to_vec(&input).expect("digest input serializes");
    let h = Sha256::digest(&bytes);
    h[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn row(cfg: &ExperimentConfig, kind: RunKind, pairing: Vec<String>, width: f64, weighting: Option<Weighting>, trial: u32) -> RunRow {
    let id = run_id(kind, &pairing, width, weighting, trial);
    let dir = PathBuf::from("runs").join(&id);
    let mut r = RunRow {
        seed: run_seed(trial, kind, &pairing, width, weighting),
        run_id: id,
        kind,
        pairing,
        width,
        weighting,
        trial,
        config_digest: String::new(),
        checkpoint: dir.join("model.ckpt"),
        log: dir.join("train.jsonl"),
        status: RunStatus::Pending,
        checkpoint_sha256: None,
        diagnostic: None,
    };
    r.config_digest = digest(cfg, &r);
    r
}

/// Enumerates every run the config demands: baselines per domain, joint
/// runs per pairing and weighting when the MDL arm is on, fine-tunes per
/// ordered pair when the transfer-learning arm is on. Pure and idempotent.
pub fn plan(cfg: &ExperimentConfig) -> Result<RunCatalog> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for trial in 0..cfg.trials {
        for &w in &cfg.widths {
            for d in &cfg.domains {
                rows.push(row(cfg, RunKind::Single, vec![d.name.clone()], w, None, trial));
            }
            if cfg.arms.mdl {
                for p in cfg.joint_pairings() {
                    for &wt in &cfg.weightings {
                        rows.push(row(cfg, RunKind::Joint, p.clone(), w, Some(wt), trial));
                    }
                }
            }
            if cfg.arms.transfer_learning {
                for (s, t) in cfg.transfer_pairs() {
                    rows.push(row(cfg, RunKind::Finetune, vec![s, t], w, None, trial));
                }
            }
        }
    }
    let mut ids = BTreeSet::new();
    for r in &rows {
        if !ids.insert(r.run_id.as_str()) {
            return Err(Error::Config { field: "domains".into(), message: format!("run id {} is ambiguous", r.run_id) });
        }
    }
    Ok(RunCatalog { rows })
}

/// The single run a fine-tune starts from.
pub fn pretrain_run_id(row: &RunRow) -> Option<String> {
    (row.kind == RunKind::Finetune).then(|| run_id(RunKind::Single, &row.pairing[..1], row.width, None, row.trial))
}

/// The baseline of `domain` matched to `row`'s width and trial.
pub fn baseline_run_id(row: &RunRow, domain: &str) -> String {
    run_id(RunKind::Single, &[domain.to_string()], row.width, None, row.trial)
}
