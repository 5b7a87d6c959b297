//! Command-line front end: configuration, verification suites and reports.

pub mod config;
pub mod report;
pub mod suites;

use std::collections::BTreeMap;

use config::{ExperimentConfig, Subcommand};
use report::{write_json, Report};
use suites::{RunError, RunOutput, Timings};

/// Runs a resolved configuration and returns the process exit code:
/// 0 when every invariant holds, 1 on a failing invariant or runtime error.
pub fn run(cfg: &ExperimentConfig) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.jobs.unwrap_or(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cfg)) {
        Ok(report) => {
            if report.all_pass {
                0
            } else {
                eprintln!("failing invariants:");
                for name in &report.failing {
                    eprintln!("  {name}");
                }
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cfg: &ExperimentConfig) -> Result<Report, RunError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let out: RunOutput = match cfg.subcommand {
        Subcommand::VerifyAll => return verify_all(cfg),
        Subcommand::Landau => suites::landau::run(cfg)?,
        Subcommand::Kernel => suites::oseen::run(cfg)?,
        Subcommand::Potentials => suites::potentials::run(cfg)?,
        Subcommand::Decompose => suites::decomp::run(cfg)?,
        Subcommand::Picard => suites::perturbed::run(cfg)?,
        Subcommand::Flux => suites::flux::run(cfg)?,
    };
    let mut report = Report::new(cfg.subcommand.name(), cfg.seed, cfg.param_strings(), out.sections);
    if let Some(g) = out.grid {
        report = report.with_grid(g);
    }
    report.write(&cfg.output_dir)?;
    Ok(report)
}

fn verify_all(cfg: &ExperimentConfig) -> Result<Report, RunError> {
    let mut timings = Timings::default();
    let mut sections = Vec::new();
    for suite in suites::verify_all(cfg.seed) {
        let sec = suite.section;
        let total = sec.checks.len();
        let passed = sec.checks.iter().filter(|c| c.pass).count();
        println!("{:<12} {passed}/{total} invariants hold", sec.module);
        timings.merge(suite.timings);
        sections.push(sec);
    }
    let report = Report::new("verify-all", cfg.seed, BTreeMap::new(), sections);
    report.write(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("timings.json"), &timings.0)?;
    Ok(report)
}
