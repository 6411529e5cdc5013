mod common;

use common::{snapshot, tiny_grid};
use mdllens::grid::{analyze, execute, plan, ExecuteOptions, RunCatalog, RunKind, RunStatus};
use mdllens::Error;

fn opts() -> ExecuteOptions {
    ExecuteOptions::default()
}

#[test]
fn failing_rows_are_recorded_and_the_grid_continues() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_grid(dir.path(), 2, &[0.25], 1, true);
    cfg.train.lr = Some(1e6);
    let report = execute(&cfg, dir.path(), &opts()).unwrap();
    let total = plan(&cfg).unwrap().rows.len();
    assert_eq!(report.ran, total);
    assert_eq!(report.failed.len(), total);
    for row in &report.catalog.rows {
        assert_eq!(row.status, RunStatus::Failed);
        let diag = row.diagnostic.as_deref().unwrap();
        match row.kind {
            RunKind::Finetune => assert!(diag.contains("single_"), "{diag}"),
            _ => assert!(diag.contains("diverged"), "{diag}"),
        }
    }
    // the saved catalog says the same
    assert_eq!(RunCatalog::load(dir.path()).unwrap().unwrap(), report.catalog);
}

#[test]
fn baselines_only_emits_accuracy_and_stops() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_grid(dir.path(), 2, &[0.25], 1, false);
    cfg.pairings.clear();
    execute(&cfg, dir.path(), &opts()).unwrap();
    let out = analyze(&cfg, dir.path(), &dir.path().join("report")).unwrap();
    assert!(out.missing.is_empty());
    let acc = out.report.get("tables/baseline_accuracy.csv").unwrap();
    assert_eq!(acc.lines().count(), 3);
    assert!(out.report.get("tables/mdl_metrics.csv").is_none());
}

#[test]
fn missing_runs_are_listed_not_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_grid(dir.path(), 2, &[0.25], 1, false);
    assert!(matches!(analyze(&cfg, dir.path(), &dir.path().join("r")), Err(Error::MissingRuns(_))));

    let rows = plan(&cfg).unwrap().rows.len();
    let report = execute(&cfg, dir.path(), &ExecuteOptions { max_runs: Some(3), ..opts() }).unwrap();
    assert!(report.interrupted);
    let out = analyze(&cfg, dir.path(), &dir.path().join("r")).unwrap();
    assert_eq!(out.missing.len(), rows - 3);
    // every pending joint appears in the missing list
    for r in report.catalog.rows.iter().filter(|r| r.status == RunStatus::Pending) {
        assert!(out.missing.contains(&r.run_id), "{}", r.run_id);
    }
    let metrics = out.report.get("tables/mdl_metrics.csv").unwrap();
    assert!(metrics.contains("NA"));
}

#[test]
fn resume_reruns_only_rows_whose_artifacts_fail_to_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_grid(dir.path(), 2, &[0.25], 1, false);
    let first = execute(&cfg, dir.path(), &opts()).unwrap();
    let victim = first.catalog.rows[0].clone();
    std::fs::write(dir.path().join(&victim.checkpoint), b"corrupt").unwrap();
    let second = execute(&cfg, dir.path(), &ExecuteOptions { resume: true, ..opts() }).unwrap();
    assert_eq!(second.ran, 1);
    assert_eq!(second.skipped, first.catalog.rows.len() - 1);
    assert_eq!(second.catalog, first.catalog);
}

#[test]
fn rerunning_analysis_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_grid(dir.path(), 3, &[0.25], 2, true);
    execute(&cfg, dir.path(), &opts()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    analyze(&cfg, dir.path(), &a).unwrap();
    analyze(&cfg, dir.path(), &b).unwrap();
    let sa = snapshot(&a);
    assert!(sa.contains_key("tables/tl_mdl_correlation.csv"));
    assert_eq!(sa, snapshot(&b));
}

#[test]
fn workers_do_not_change_results() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = tiny_grid(d1.path(), 2, &[0.25], 1, true);
    let one = execute(&cfg, d1.path(), &opts()).unwrap();
    let three = execute(&cfg, d2.path(), &ExecuteOptions { workers: 3, ..opts() }).unwrap();
    assert_eq!(one.catalog, three.catalog);
}
