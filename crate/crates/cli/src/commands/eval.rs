use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use difformer::graph::Split;
use difformer::model::{predict, Checkpoint};
use difformer::train::{dataset_targets, metric, MetricKind};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CommonFlags, DataFlags, Source};
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

/// Score a checkpoint on a dataset split; prints the metric as JSON.
#[derive(Debug, Args, Serialize)]
pub struct Flags {
    /// checkpoint-seed<N>.json written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    data: DataFlags,
    /// train, val or test.
    #[arg(long)]
    split: Option<Split>,
    /// accuracy, rocauc or mse; default mse for one-output models, accuracy otherwise.
    #[arg(long)]
    metric: Option<MetricKind>,
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    cora: Option<PathBuf>,
    synth: Option<String>,
    split: Split,
    metric: Option<MetricKind>,
    seed: u64,
    out: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            cora: None,
            synth: None,
            split: Split::Test,
            metric: None,
            seed: 0,
            out: PathBuf::from("runs/eval"),
        }
    }
}

pub fn run(flags: Flags) -> CliResult<ExitCode> {
    let mut s: Settings = resolve("eval", &flags, flags.common.config.as_deref())?;
    let ckpt_path = s.checkpoint.clone().ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
    let source = Source::select(s.data.as_deref(), s.cora.as_deref(), s.synth.as_deref())?;
    let mut run = Run::start("eval", &s.out)?;
    run.input(&ckpt_path)?;
    source.record_inputs(&mut run)?;

    let ckpt = Checkpoint::load(&ckpt_path)?;
    let kind = *s.metric.get_or_insert(if ckpt.config.output_dim == 1 { MetricKind::Mse } else { MetricKind::Accuracy });
    let ds = source.load(s.seed)?;
    let graph = if ckpt.config.use_graph { ds.graph.as_ref() } else { None };
    let scores = predict(&ckpt.params, &ds.features, graph, &ckpt.config)?;
    let nodes = ds.indices(s.split);
    let value = metric(kind, &scores, &dataset_targets(&ds, kind), &nodes)?;

    let report = json!({
        "checkpoint": ckpt_path.display().to_string(),
        "split": s.split,
        "metric": kind,
        "value": value,
        "nodes": nodes.len(),
    });
    let body = serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{body}");
    run.write("metrics.json", body.as_bytes())?;
    run.finish(&s, s.seed)?;
    Ok(ExitCode::SUCCESS)
}
