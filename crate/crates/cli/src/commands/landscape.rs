use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use difformer::coupling::{write_landscape_csv, PenaltyFamily};
use serde::{Deserialize, Serialize};

use super::CommonFlags;
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

/// Tabulate penalty curves f and delta over squared distances in [0, 4].
#[derive(Debug, Args, Serialize)]
pub struct Flags {
    /// Comma-separated: simple, advanced, softmax, kernel, quadratic.
    #[arg(long, value_delimiter = ',')]
    family: Option<Vec<String>>,
    /// Grid spacing.
    #[arg(long)]
    step: Option<f64>,
    /// Embedding width for the softmax temperature.
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    family: Vec<String>,
    step: f64,
    dim: usize,
    seed: u64,
    out: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            family: vec!["simple".into(), "advanced".into()],
            step: 0.01,
            dim: 1,
            seed: 0,
            out: PathBuf::from("runs/landscape"),
        }
    }
}

pub fn run(flags: Flags) -> CliResult<ExitCode> {
    let s: Settings = resolve("landscape", &flags, flags.common.config.as_deref())?;
    let families = s
        .family
        .iter()
        .map(|name| Ok((name, PenaltyFamily::parse(name, s.dim)?)))
        .collect::<CliResult<Vec<_>>>()?;
    if s.step.is_nan() || s.step <= 0.0 {
        return Err(CliError::Usage(format!("--step must be positive, got {}", s.step)));
    }
    let mut run = Run::start("landscape", &s.out)?;
    for (name, family) in families {
        let mut body = Vec::new();
        write_landscape_csv(&mut body, &family, s.step).map_err(|e| CliError::Runtime(e.to_string()))?;
        let path = run.write(&format!("landscape_{name}.csv"), &body)?;
        println!("{name}: {}", path.display());
    }
    run.finish(&s, s.seed)?;
    Ok(ExitCode::SUCCESS)
}
