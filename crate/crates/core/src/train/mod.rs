//! Single-domain, joint and fine-tuning training loops.

mod config;
mod log;
mod optim;
mod step;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

pub use config::{
    milestones_for, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LR, DEFAULT_LR_DECAY, DEFAULT_MOMENTUM,
    DEFAULT_WEIGHT_DECAY, DESK_JOINT_EPOCHS, DESK_SINGLE_EPOCHS, DIVERGENCE_THRESHOLD, JOINT_MILESTONE_FRACTIONS,
    SINGLE_MILESTONE_FRACTIONS,
};
pub use log::{EvalRecord, StepRecord, TrainLog};
pub use optim::{ScalarSgd, Sgd};
pub use step::{backward_step, step_losses, weighted_total, StepLosses, StepOutcome};

use crate::data::{mixed_batches, Domain};
use crate::error::{Error, Result};
use crate::metrics::predict_domain;
use crate::model::{MdlModel, TaskId, WidthConfig};
use crate::seed::derive_seed;
use crate::weighting::{CovHistory, WeightingState};

fn model_seed(cfg: &TrainConfig, label: &str) -> u64 {
    derive_seed([label.to_string(), cfg.seed.to_string()])
}

fn epoch_seed(cfg: &TrainConfig, epoch: usize) -> u64 {
    derive_seed(["epoch".to_string(), cfg.seed.to_string(), epoch.to_string()])
}

fn head_sizes(domains: &[Domain]) -> Result<BTreeMap<TaskId, usize>> {
    let mut heads = BTreeMap::new();
    for d in domains {
        if heads.insert(d.task_label, d.num_classes()).is_some() {
            return Err(Error::invalid(format!("task label {} used by more than one domain", d.task_label)));
        }
    }
    Ok(heads)
}

fn shared_image_size(domains: &[Domain]) -> Result<usize> {
    let size = domains.first().ok_or_else(|| Error::invalid("no domains given"))?.image_size();
    if domains.iter().any(|d| d.image_size() != size) {
        return Err(Error::Shape("domains must share one image size".into()));
    }
    Ok(size)
}

fn guard(step: u64, out: &StepOutcome) -> Result<()> {
    let worst = out
        .losses
        .losses
        .values
        .values()
        .copied()
        .chain([out.losses.total])
        .find(|l| !l.is_finite() || *l > DIVERGENCE_THRESHOLD);
    match worst {
        Some(loss) => Err(Error::Diverged { step: step as usize, loss }),
        None => Ok(()),
    }
}

/// Trains `model` on the union of `domains` (mixed batches) and returns the
/// log. Heads of tasks absent from a batch are left untouched that step.
pub fn train_model(model: &mut MdlModel<f32>, domains: &[Domain], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let heads = head_sizes(domains)?;
    if shared_image_size(domains)? != model.image_size {
        return Err(Error::Shape(format!("model expects {}px images", model.image_size)));
    }
    if let Some(t) = heads.keys().find(|t| !model.has_head(**t)) {
        return Err(Error::UnknownTask(*t));
    }
    let tasks: BTreeSet<TaskId> = heads.keys().copied().collect();
    let mut state = match WeightingState::new(cfg.weighting, &tasks) {
        WeightingState::Cov(_) => WeightingState::Cov(CovHistory::new(&tasks, cfg.cov_warmup)),
        s => s,
    };
    let mut sgd = Sgd::<f32>::new(cfg.momentum, cfg.weight_decay);
    let mut log_var_sgd = ScalarSgd::new(cfg.momentum);
    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut step = 0u64;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        for batch in mixed_batches(domains, cfg.batch_size, epoch_seed(cfg, epoch))? {
            model.zero_grad();
            let out = backward_step(model, batch.images, &batch.labels, &batch.tasks, &mut state)?;
            guard(step, &out)?;
            let present = out.present_tasks();
            let model_tasks: Vec<TaskId> = model.tasks().collect();
            let inactive: Vec<String> =
                model_tasks.iter().filter(|t| !present.contains(t)).map(|t| format!("heads.{t}.")).collect();
            sgd.step(model.params_mut(), lr, |name| !inactive.iter().any(|p| name.starts_with(p.as_str())));
            if let (WeightingState::Uncertainty(u), Some(g)) = (&mut state, &out.log_var_grad) {
                log_var_sgd.step(&mut u.log_var, g, lr);
            }
            for (&task, &lambda) in &out.losses.lambda {
                let loss = out.losses.losses.values.get(&task).copied();
                log.steps.push(StepRecord { step, epoch, task, loss, lambda, lr });
            }
            step += 1;
        }
        if cfg.eval_each_epoch || epoch + 1 == cfg.epochs {
            for d in domains {
                let acc = predict_domain(model, d, "")?.accuracy();
                ::log::debug!("epoch {epoch} {}: test accuracy {acc:.2}%", d.name());
                log.evals.push(EvalRecord { epoch, domain: d.name().to_string(), test_acc: acc });
            }
        }
    }
    log.num_steps = step;
    log.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Independent model with one head, trained from scratch.
pub fn train_single(domain: &Domain, width: WidthConfig, cfg: &TrainConfig) -> Result<(MdlModel<f32>, TrainLog)> {
    let domains = std::slice::from_ref(domain);
    let mut model = MdlModel::new(width, &head_sizes(domains)?, domain.image_size(), model_seed(cfg, "init"))?;
    let log = train_model(&mut model, domains, cfg)?;
    Ok((model, log))
}

/// Hard-parameter-sharing model over at least two domains, one head each.
pub fn train_joint(domains: &[Domain], width: WidthConfig, cfg: &TrainConfig) -> Result<(MdlModel<f32>, TrainLog)> {
    if domains.len() < 2 {
        return Err(Error::invalid("joint training needs at least two domains"));
    }
    let size = shared_image_size(domains)?;
    let mut model = MdlModel::new(width, &head_sizes(domains)?, size, model_seed(cfg, "init"))?;
    let log = train_model(&mut model, domains, cfg)?;
    Ok((model, log))
}

/// Starts from `pretrained`'s backbone, attaches a fresh head for `target`
/// and trains every parameter on `target` alone. With
/// `source_head_dropped` the pretrained heads are discarded; otherwise they
/// are kept (and stay frozen, since they never receive gradient).
pub fn finetune(
    pretrained: &MdlModel<f32>,
    source_head_dropped: bool,
    target: &Domain,
    width: WidthConfig,
    cfg: &TrainConfig,
) -> Result<(MdlModel<f32>, TrainLog)> {
    if pretrained.width != width {
        return Err(Error::invalid(format!(
            "pretrained width {} does not match requested {}",
            pretrained.width.label(),
            width.label()
        )));
    }
    let mut model = pretrained.clone();
    let seed = model_seed(cfg, "head");
    if source_head_dropped {
        model.reset_heads(&BTreeMap::from([(target.task_label, target.num_classes())]), seed)?;
    } else {
        model.add_head(target.task_label, target.num_classes(), seed)?;
    }
    let log = train_model(&mut model, std::slice::from_ref(target), cfg)?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_domain, SyntheticDomainParams};
    use crate::weighting::Weighting;

    fn domain(shift: u64, task: TaskId) -> Domain {
        let mut p = SyntheticDomainParams::new(3, 6, 2, shift);
        p.image_size = 8;
        make_synthetic_domain(&p).unwrap().with_task_label(task)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { batch_size: 8, ..TrainConfig::new(epochs, vec![], 3) }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let d = domain(0, 0);
        let w = WidthConfig::new(0.25).unwrap();
        let (m, log) = train_single(&d, w, &cfg(0)).unwrap();
        let init = MdlModel::<f32>::new(w, &BTreeMap::from([(0, 3)]), 8, model_seed(&cfg(0), "init")).unwrap();
        assert_eq!(m.params().iter().map(|(_, p)| &p.value).collect::<Vec<_>>(), init.params().iter().map(|(_, p)| &p.value).collect::<Vec<_>>());
        assert_eq!(log.num_steps, 0);
    }

    #[test]
    fn step_count_and_uniform_lambda() {
        let ds = [domain(0, 0), domain(1, 1)];
        let (m, log) = train_joint(&ds, WidthConfig::new(0.25).unwrap(), &cfg(2)).unwrap();
        assert_eq!(m.head_sizes().len(), 2);
        // 36 samples at batch 8 → 5 batches per epoch
        assert_eq!(log.num_steps, 10);
        assert_eq!(log.steps.len(), 20);
        assert!(log.steps.iter().all(|r| r.lambda == 1.0));
        assert_eq!(log.evals.len(), 4);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = [domain(0, 0), domain(1, 1)];
        let c = TrainConfig { weighting: Weighting::Cov, cov_warmup: 2, ..cfg(2) };
        let (_, a) = train_joint(&ds, WidthConfig::new(0.25).unwrap(), &c).unwrap();
        let (_, b) = train_joint(&ds, WidthConfig::new(0.25).unwrap(), &c).unwrap();
        assert_eq!(a.loss_curve(), b.loss_curve());
        assert_eq!(a.evals, b.evals);
    }

    #[test]
    fn finetune_checks_width_and_keeps_backbone_at_zero_epochs() {
        let src = domain(0, 0);
        let tgt = domain(1, 1);
        let w = WidthConfig::new(0.25).unwrap();
        let (pre, _) = train_single(&src, w, &cfg(1)).unwrap();
        assert!(finetune(&pre, true, &tgt, WidthConfig::new(0.5).unwrap(), &cfg(0)).is_err());
        let (ft, _) = finetune(&pre, true, &tgt, w, &cfg(0)).unwrap();
        assert_eq!(ft.backbone_params(), pre.backbone_params());
        assert_eq!(ft.head_sizes(), BTreeMap::from([(1, 3)]));
        let (kept, _) = finetune(&pre, false, &tgt, w, &cfg(1)).unwrap();
        assert_eq!(kept.head_sizes().len(), 2);
        let src_head = |m: &MdlModel<f32>| m.params().into_iter().filter(|(n, _)| n.starts_with("heads.0.")).map(|(_, p)| p.value.clone()).collect::<Vec<_>>();
        assert_eq!(src_head(&kept), src_head(&pre));
    }

    #[test]
    fn divergence_guard_trips() {
        let d = domain(0, 0);
        let c = TrainConfig { lr: 1e6, ..cfg(3) };
        assert!(matches!(train_single(&d, WidthConfig::new(0.25).unwrap(), &c), Err(Error::Diverged { .. })));
    }
}
