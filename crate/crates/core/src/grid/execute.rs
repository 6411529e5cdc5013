//! Runs pending catalog rows, baselines before the fine-tunes that need
//! them, updating the catalog after every row.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use sha2::{Digest, Sha256};

use super::catalog::{plan, pretrain_run_id, train_config, RunCatalog, RunKind, RunRow, RunStatus};
use super::config::ExperimentConfig;
use crate::data::{build_domain, probe_set, Domain, ProbeSet};
use crate::error::{Error, Result};
use crate::metrics::predict_domain;
use crate::model::{checkpoint, MdlModel};
use crate::similarity::extract_representations;
use crate::train::{finetune, train_joint, train_single};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecuteOptions {
    /// Keep completed rows whose artifacts verify.
    pub resume: bool,
    pub workers: usize,
    /// Stop after starting this many runs (simulates an interrupted grid).
    pub max_runs: Option<usize>,
}

impl Default for ExecuteOptions {
    fn default() -> Self {
        ExecuteOptions { resume: false, workers: 1, max_runs: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecuteReport {
    pub catalog: RunCatalog,
    pub ran: usize,
    pub skipped: usize,
    pub failed: Vec<String>,
    /// Rows left pending because `max_runs` was reached.
    pub interrupted: bool,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Checks that a completed row's files exist and its checkpoint hash matches.
pub fn verify_artifacts(root: &Path, row: &RunRow) -> bool {
    let Some(expected) = &row.checkpoint_sha256 else { return false };
    if !matches!(sha256_file(&root.join(&row.checkpoint)), Ok(h) if &h == expected) {
        return false;
    }
    let mut files = vec![row.log.clone()];
    files.extend(row.eval_domains().iter().map(|d| row.predictions(d)));
    if row.kind == RunKind::Single {
        files.push(row.representations());
    }
    files.iter().all(|f| root.join(f).is_file())
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    root: &'a Path,
    domains: BTreeMap<String, Domain>,
    probe: ProbeSet,
}

impl Context<'_> {
    fn domains_of(&self, names: &[String]) -> Result<Vec<Domain>> {
        names
            .iter()
            .map(|n| self.domains.get(n).cloned().ok_or_else(|| Error::invalid(format!("unknown domain {n}"))))
            .collect()
    }

    fn run(&self, row: &RunRow, catalog: &Mutex<RunCatalog>) -> Result<String> {
        let tcfg = train_config(self.cfg, row);
        let width = self.cfg.width(row.width);
        let domains = self.domains_of(&row.pairing)?;
        let (model, mut log) = match row.kind {
            RunKind::Single => train_single(&domains[0], width, &tcfg)?,
            RunKind::Joint => train_joint(&domains, width, &tcfg)?,
            RunKind::Finetune => {
                let pre_id = pretrain_run_id(row).expect("finetune row");
                let pre = catalog.lock().expect("catalog lock").get(&pre_id).cloned();
                let pre = match pre {
                    Some(p) if p.is_completed() && verify_artifacts(self.root, &p) => p,
                    _ => return Err(Error::MissingRuns(vec![pre_id])),
                };
                let ck = checkpoint::load(&self.root.join(&pre.checkpoint))?;
                finetune(&ck.model, self.cfg.train.source_head_dropped, &domains[1], width, &tcfg)?
            }
        };
        self.save(row, &model, &mut log, &domains)
    }

    fn save(&self, row: &RunRow, model: &MdlModel<f32>, log: &mut crate::train::TrainLog, domains: &[Domain]) -> Result<String> {
        let ck_path = self.root.join(&row.checkpoint);
        checkpoint::save(&ck_path, model, log.num_steps, row.seed)?;
        log.checkpoint = Some(row.checkpoint.to_string_lossy().into_owned());
        log.write(&self.root.join(&row.log))?;
        for d in domains.iter().filter(|d| row.eval_domains().iter().any(|n| n == d.name())) {
            predict_domain(model, d, &row.run_id)?.write(&self.root.join(row.predictions(d.name())))?;
        }
        if row.kind == RunKind::Single {
            let mut reps = extract_representations(model, &self.probe, &row.run_id)?;
            reps.width = Some(model.width);
            reps.write(&self.root.join(row.representations()))?;
        }
        sha256_file(&ck_path)
    }
}

/// Every declared domain in config order, task label = position.
pub fn build_config_domains(cfg: &ExperimentConfig) -> Result<Vec<Domain>> {
    cfg.domains.iter().enumerate().map(|(i, spec)| Ok(build_domain(spec)?.with_task_label(i as u32))).collect()
}

/// The probe set of a config: `probe.per_class` test samples per class of
/// every declared domain.
pub fn config_probe_set(cfg: &ExperimentConfig, domains: &[Domain]) -> Result<ProbeSet> {
    probe_set(domains, cfg.probe.per_class, cfg.probe.seed)
}

fn describe_panic(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Plans the config into the root's catalog and runs whatever is pending.
/// A failing row is recorded with its diagnostic and the grid continues.
pub fn execute(cfg: &ExperimentConfig, root: &Path, opts: &ExecuteOptions) -> Result<ExecuteReport> {
    let planned = plan(cfg)?;
    let mut catalog = RunCatalog::load(root)?.unwrap_or_default();
    catalog.merge_plan(&planned);
    let mut skipped = 0;
    for p in &planned.rows {
        let row = catalog.get_mut(&p.run_id).expect("merged");
        if opts.resume && row.is_completed() && verify_artifacts(root, row) {
            skipped += 1;
        } else {
            row.status = RunStatus::Pending;
            row.checkpoint_sha256 = None;
            row.diagnostic = None;
        }
    }
    catalog.save(root)?;

    let pending = |kinds: &[RunKind], cat: &RunCatalog| -> Vec<RunRow> {
        planned
            .rows
            .iter()
            .filter_map(|p| cat.get(&p.run_id))
            .filter(|r| r.status == RunStatus::Pending && kinds.contains(&r.kind))
            .cloned()
            .collect()
    };
    let domains = build_config_domains(cfg)?;
    let ctx = Context {
        cfg,
        root,
        probe: config_probe_set(cfg, &domains)?,
        domains: domains.into_iter().map(|d| (d.name().to_string(), d)).collect(),
    };
    let catalog = Mutex::new(catalog);
    let started = AtomicUsize::new(0);
    let limit = opts.max_runs.unwrap_or(usize::MAX);
    let mut ran = 0;
    let mut failed = Vec::new();
    for phase in [&[RunKind::Single, RunKind::Joint][..], &[RunKind::Finetune][..]] {
        let rows = pending(phase, &catalog.lock().expect("catalog lock"));
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<(String, bool)>> = Mutex::new(Vec::new());
        let saved: Mutex<Result<()>> = Mutex::new(Ok(()));
        std::thread::scope(|s| {
            for _ in 0..opts.workers.max(1).min(rows.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= rows.len() {
                        break;
                    }
                    if started.fetch_add(1, Ordering::SeqCst) >= limit {
                        break;
                    }
                    let row = &rows[i];
                    log::info!("run {} ({}/{})", row.run_id, i + 1, rows.len());
                    let t = Instant::now();
                    let outcome = catch_unwind(AssertUnwindSafe(|| ctx.run(row, &catalog)))
                        .unwrap_or_else(|p| Err(Error::invalid(format!("run panicked: {}", describe_panic(p)))));
                    let mut cat = catalog.lock().expect("catalog lock");
                    let entry = cat.get_mut(&row.run_id).expect("planned row");
                    let ok = outcome.is_ok();
                    match outcome {
                        Ok(hash) => {
                            entry.status = RunStatus::Completed;
                            entry.checkpoint_sha256 = Some(hash);
                            log::info!("run {} completed in {:.1}s", row.run_id, t.elapsed().as_secs_f64());
                        }
                        Err(e) => {
                            entry.status = RunStatus::Failed;
                            entry.diagnostic = Some(e.to_string());
                            log::warn!("run {} failed: {e}", row.run_id);
                        }
                    }
                    if let Err(e) = cat.save(root) {
                        *saved.lock().expect("save lock") = Err(e);
                    }
                    results.lock().expect("results lock").push((row.run_id.clone(), ok));
                });
            }
        });
        saved.into_inner().expect("save lock")?;
        for (id, ok) in results.into_inner().expect("results lock") {
            ran += 1;
            if !ok {
                failed.push(id);
            }
        }
        if started.load(Ordering::SeqCst) >= limit {
            break;
        }
    }
    failed.sort();
    let catalog = catalog.into_inner().expect("catalog lock");
    let interrupted = planned.rows.iter().any(|p| catalog.get(&p.run_id).is_some_and(|r| r.status == RunStatus::Pending));
    Ok(ExecuteReport { catalog, ran, skipped, failed, interrupted })
}
