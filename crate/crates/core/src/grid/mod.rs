//! Declarative experiment grids: config, run catalog, execution and the
//! analysis entry point.

mod analyze;
mod catalog;
mod config;
mod execute;

pub use analyze::{analyze, build_report, AnalysisOutcome, MdlCell, CORRELATION_HEADER, RELATIONSHIP_HEADER};
pub use catalog::{
    baseline_run_id, plan, pretrain_run_id, run_id, run_seed, train_config, RunCatalog, RunKind, RunRow, RunStatus, CATALOG_FILE,
};
pub use config::{Arms, ExperimentConfig, ProbeConfig, TrainOverrides, CACHE_ENV};
pub use execute::{build_config_domains, config_probe_set, execute, sha256_file, verify_artifacts, ExecuteOptions, ExecuteReport};
