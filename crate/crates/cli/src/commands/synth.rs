use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use difformer::graph::{sbm_generate, SbmConfig};
use serde::{Deserialize, Serialize};

use super::CommonFlags;
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

/// Generate a stochastic-block-model dataset in the plain-text formats.
#[derive(Debug, Args, Serialize)]
pub struct Flags {
    /// Generator; only `sbm`.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    per_block: Option<usize>,
    /// Edge probability inside a block.
    #[arg(long)]
    p_in: Option<f64>,
    /// Edge probability across blocks.
    #[arg(long)]
    p_out: Option<f64>,
    #[arg(long)]
    feat_dim: Option<usize>,
    /// Mean shift of each block's feature coordinate.
    #[arg(long)]
    feat_shift: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    kind: String,
    blocks: usize,
    per_block: usize,
    p_in: f64,
    p_out: f64,
    feat_dim: usize,
    feat_shift: f64,
    seed: u64,
    out: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        let sbm = SbmConfig::default();
        Self {
            kind: "sbm".into(),
            blocks: sbm.blocks,
            per_block: sbm.per_block,
            p_in: sbm.p_in,
            p_out: sbm.p_out,
            feat_dim: sbm.feat_dim,
            feat_shift: sbm.feat_shift,
            seed: 0,
            out: PathBuf::from("runs/synth"),
        }
    }
}

pub fn run(flags: Flags) -> CliResult<ExitCode> {
    let s: Settings = resolve("synth", &flags, flags.common.config.as_deref())?;
    if s.kind != "sbm" {
        return Err(CliError::Usage(format!("unknown generator `{}` (expected sbm)", s.kind)));
    }
    let cfg = SbmConfig {
        blocks: s.blocks,
        per_block: s.per_block,
        p_in: s.p_in,
        p_out: s.p_out,
        feat_dim: s.feat_dim,
        feat_shift: s.feat_shift,
    };
    let ds = sbm_generate(&cfg, s.seed)?;
    let mut run = Run::start("synth", &s.out)?;
    ds.save(run.out_dir())?;
    for name in ["features.txt", "labels.txt", "split.txt", "edges.txt"] {
        run.produced(run.out_dir().join(name));
    }
    let edges = ds.graph.as_ref().map_or(0, |g| g.edges().len());
    println!("{} nodes, {edges} edges, {} classes -> {}", ds.n(), ds.num_classes(), s.out.display());
    run.finish(&s, s.seed)?;
    Ok(ExitCode::SUCCESS)
}
