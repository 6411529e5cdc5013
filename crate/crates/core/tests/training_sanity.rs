mod common;

use common::synthetic;
use mdllens::data::{mixed_batches, probe_set};
use mdllens::model::WidthConfig;
use mdllens::similarity::{extract_in_batches, extract_representations};
use mdllens::train::{finetune, milestones_for, train_joint, train_single, TrainConfig, JOINT_MILESTONE_FRACTIONS, SINGLE_MILESTONE_FRACTIONS};
use mdllens::weighting::Weighting;

fn w(m: f64) -> WidthConfig {
    WidthConfig::new(m).unwrap()
}

fn small_cfg(epochs: usize, milestones: Vec<usize>) -> TrainConfig {
    TrainConfig { batch_size: 8, lr: 0.05, ..TrainConfig::new(epochs, milestones, 5) }
}

#[test]
fn milestone_values() {
    assert_eq!(milestones_for(250, &SINGLE_MILESTONE_FRACTIONS), vec![140, 210]);
    assert_eq!(milestones_for(300, &JOINT_MILESTONE_FRACTIONS), vec![150, 249]);
    assert_eq!(milestones_for(60, &SINGLE_MILESTONE_FRACTIONS), vec![34, 50]);
    assert_eq!(milestones_for(75, &JOINT_MILESTONE_FRACTIONS), vec![38, 62]);
}

#[test]
fn logged_learning_rate_follows_schedule() {
    let d = synthetic(3, 4, 2, 0, 8);
    let cfg = small_cfg(5, vec![2, 4]);
    let (_, log) = train_single(&d, w(0.25), &cfg).unwrap();
    for s in &log.steps {
        let want = match s.epoch {
            0 | 1 => 0.05,
            2 | 3 => 0.05 * 0.1,
            _ => 0.05 * 0.1 * 0.1,
        };
        assert_eq!(s.lr, want, "epoch {}", s.epoch);
        assert_eq!(s.lr, cfg.lr_at_epoch(s.epoch));
    }
}

#[test]
fn step_count_is_epochs_times_batches() {
    let a = synthetic(3, 5, 2, 0, 8).with_task_label(0);
    let b = synthetic(3, 4, 2, 1, 8).with_task_label(1);
    let cfg = TrainConfig { weighting: Weighting::Cov, ..small_cfg(3, vec![]) };
    let (_, log) = train_joint(&[a.clone(), b.clone()], w(0.25), &cfg).unwrap();
    let per_epoch = mixed_batches(&[a, b], 8, 0).unwrap().num_batches() as u64;
    assert_eq!(per_epoch, 4); // 27 samples at batch 8
    assert_eq!(log.num_steps, 3 * per_epoch);
    assert!(log.loss_curve().iter().all(|(_, _, l)| l.is_finite()));
    // every epoch is evaluated on both domains
    assert_eq!(log.evals.len(), 3 * 2);
}

#[test]
fn probe_features_do_not_depend_on_batch_size() {
    let domains = vec![synthetic(4, 3, 5, 0, 8).with_task_label(0), synthetic(4, 3, 5, 1, 8).with_task_label(1)];
    let probe = probe_set(&domains, 3, 0).unwrap();
    let (model, _) = train_single(&domains[0], w(0.5), &small_cfg(1, vec![])).unwrap();
    let whole = extract_representations(&model, &probe, "m").unwrap();
    for bs in [1, 5, 7] {
        let chunked = extract_in_batches(&model, &probe, "m", bs).unwrap();
        assert_eq!(chunked.sample_ids, whole.sample_ids);
        for (a, b) in chunked.features.iter().zip(&whole.features) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "batch {bs}: {a} vs {b}");
        }
    }
}

#[test]
fn same_seed_same_curve_different_seed_different_curve() {
    let d = synthetic(3, 6, 2, 2, 8);
    let cfg = small_cfg(2, vec![]);
    let (m1, l1) = train_single(&d, w(0.25), &cfg).unwrap();
    let (m2, l2) = train_single(&d, w(0.25), &cfg).unwrap();
    assert_eq!(l1.loss_curve(), l2.loss_curve());
    assert_eq!(m1, m2);
    let (_, l3) = train_single(&d, w(0.25), &TrainConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(l1.loss_curve(), l3.loss_curve());
}

#[test]
fn finetune_keeps_or_drops_source_heads() {
    let a = synthetic(3, 4, 2, 0, 8).with_task_label(0);
    let b = synthetic(4, 4, 2, 1, 8).with_task_label(1);
    let (pre, _) = train_single(&a, w(0.25), &small_cfg(1, vec![])).unwrap();
    let (dropped, _) = finetune(&pre, true, &b, w(0.25), &small_cfg(1, vec![])).unwrap();
    assert_eq!(dropped.tasks().collect::<Vec<_>>(), vec![1]);
    let (kept, _) = finetune(&pre, false, &b, w(0.25), &small_cfg(1, vec![])).unwrap();
    assert_eq!(kept.tasks().collect::<Vec<_>>(), vec![0, 1]);
    // the source head never receives gradient during fine-tuning
    let head = |m: &mdllens::model::MdlModel<f32>| {
        m.params().into_iter().filter(|(n, _)| n.starts_with("heads.0.")).map(|(_, p)| p.value.clone()).collect::<Vec<_>>()
    };
    assert_eq!(head(&kept), head(&pre));
    assert!(finetune(&pre, true, &b, w(0.5), &small_cfg(1, vec![])).is_err());
}
