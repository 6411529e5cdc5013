use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mdllens::grid::{analyze, build_config_domains, config_probe_set, execute, plan, ExecuteOptions, ExperimentConfig, RunStatus};
use mdllens::metrics::{mdl_scores, partition, MetricReport, PredictionLog};
use mdllens::similarity::{linear_cka, RepresentationMatrix};
use mdllens::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_RUN_FAILED: u8 = 2;
const EXIT_MISSING: u8 = 3;

/// Multi-domain learning experiment grids: train, score, compare.
#[derive(Debug, Parser)]
#[command(name = "mdllens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the run catalog a config expands to.
    Plan {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train every pending run of the grid.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Keep completed runs whose artifacts verify.
        #[arg(long)]
        resume: bool,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Compute metrics, statistics, tables and figures for a grid.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score one model's prediction log against a baseline's.
    Metrics {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        mdl: PathBuf,
    },
    /// Linear CKA between two representation CSVs.
    Cka {
        #[arg(long)]
        reps_a: PathBuf,
        #[arg(long)]
        reps_b: PathBuf,
    },
    /// Write the probe-set manifest, one `sample_id,domain,class` line per image.
    Probe {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingRuns(_) => EXIT_MISSING,
        Error::Config { .. } | Error::InvalidArgument(_) | Error::MissingSource(_) | Error::Format { .. } | Error::Json(_) => EXIT_USAGE,
        _ => EXIT_RUN_FAILED,
    }
}

fn load(config: &Path) -> mdllens::Result<ExperimentConfig> {
    ExperimentConfig::load(config)
}

fn run(cmd: Command) -> mdllens::Result<u8> {
    match cmd {
        Command::Plan { config } => {
            let cfg = load(&config)?;
            print!("{}", plan(&cfg)?.to_json());
            Ok(0)
        }
        Command::Run { config, resume, workers } => {
            let cfg = load(&config)?;
            let root = cfg.artifact_root();
            let report = execute(&cfg, &root, &ExecuteOptions { resume, workers, max_runs: None })?;
            eprintln!(
                "ran {}, skipped {}, failed {}; catalog at {}",
                report.ran,
                report.skipped,
                report.failed.len(),
                mdllens::grid::RunCatalog::path(&root).display()
            );
            for id in &report.failed {
                let diag = report.catalog.get(id).and_then(|r| r.diagnostic.clone()).unwrap_or_default();
                eprintln!("failed {id}: {diag}");
            }
            let any_failed = report.catalog.rows.iter().any(|r| r.status == RunStatus::Failed);
            Ok(if any_failed { EXIT_RUN_FAILED } else { 0 })
        }
        Command::Analyze { config, out } => {
            let cfg = load(&config)?;
            let outcome = analyze(&cfg, &cfg.artifact_root(), &out)?;
            eprintln!("wrote {} files under {}", outcome.written.len(), out.display());
            if outcome.missing.is_empty() {
                Ok(0)
            } else {
                eprintln!("missing prerequisite runs: {}", outcome.missing.join(", "));
                Ok(EXIT_MISSING)
            }
        }
        Command::Metrics { baseline, mdl } => {
            let base = PredictionLog::read(&baseline)?;
            let treated = PredictionLog::read(&mdl)?;
            let r = mdl_scores(&partition(&base)?, &treated)?;
            println!("{}", MetricReport::CSV_HEADER);
            println!("{}", r.csv_row(&treated.model_id, &treated.domain));
            Ok(0)
        }
        Command::Cka { reps_a, reps_b } => {
            let a = RepresentationMatrix::read(reps_a.to_string_lossy(), &reps_a)?;
            let b = RepresentationMatrix::read(reps_b.to_string_lossy(), &reps_b)?;
            println!("{}", linear_cka(&a, &b)?.value);
            Ok(0)
        }
        Command::Probe { config, out } => {
            let cfg = load(&config)?;
            let probe = config_probe_set(&cfg, &build_config_domains(&cfg)?)?;
            match out {
                Some(path) => probe.write_manifest(&path)?,
                None => print!("{}", probe.manifest()),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
