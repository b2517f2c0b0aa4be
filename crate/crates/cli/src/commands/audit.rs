use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Args;
use difformer::audit::{run_suite, AuditOptions, Suite};
use difformer::diffusion::AttentionGeometry;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{thread_pool, CommonFlags};
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

/// Exit code when any suite reports a violation.
pub const VIOLATION_EXIT: u8 = 3;

/// Run invariant suites and write one JSON report per suite.
#[derive(Debug, Args, Serialize)]
pub struct Flags {
    /// A suite name or `all`.
    #[arg(long)]
    suite: Option<String>,
    /// Random instances per suite.
    #[arg(long)]
    seeds: Option<usize>,
    /// renormalize or distance, for the attention suites.
    #[arg(long)]
    geometry: Option<String>,
    /// Suites run concurrently.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    suite: String,
    seeds: usize,
    geometry: AttentionGeometry,
    jobs: usize,
    seed: u64,
    out: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            suite: "all".into(),
            seeds: AuditOptions::default().seeds,
            geometry: AttentionGeometry::default(),
            jobs: 1,
            seed: 0,
            out: PathBuf::from("runs/audit"),
        }
    }
}

pub fn run(flags: Flags) -> CliResult<ExitCode> {
    let s: Settings = resolve("audit", &flags, flags.common.config.as_deref())?;
    let suites = Suite::parse_selection(&s.suite).map_err(|e| CliError::Usage(e.to_string()))?;
    if s.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let opts = AuditOptions { seeds: s.seeds, geometry: s.geometry };
    let mut run = Run::start("audit", &s.out)?;

    let reports = thread_pool(s.jobs)?.install(|| {
        suites
            .par_iter()
            .map(|&suite| {
                let started = Instant::now();
                run_suite(suite, &opts).map(|r| (r, started.elapsed()))
            })
            .collect::<Vec<_>>()
    });

    let mut failed = 0;
    for result in reports {
        let (report, elapsed) = result?;
        let body = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
        let path = run.write(&format!("audit_{}.json", report.suite), body.as_bytes())?;
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:<13} {} violations over {} seeds in {:.2?} -> {}",
            report.suite.name(),
            report.violations.len(),
            report.seeds,
            elapsed,
            path.display()
        );
        for line in &report.informational {
            println!("     {line}");
        }
        failed += usize::from(!report.passed());
    }
    run.finish(&s, s.seed)?;
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(VIOLATION_EXIT) })
}
