use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use difformer::model::{Activation, ModelConfig, Variant};
use difformer::train::{train_loop, write_history_csv, MetricKind, TrainConfig, TrainOutcome};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{thread_pool, CommonFlags, DataFlags, Source};
use crate::config::resolve;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;

/// Train DIFFormer on a dataset; writes checkpoints, metric histories and a summary.
#[derive(Debug, Args, Serialize)]
pub struct Flags {
    #[command(flatten)]
    #[serde(flatten)]
    data: DataFlags,
    /// simple, advanced, or identity (no attention: an MLP).
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// Diffusion step size per layer (default 0.5).
    #[arg(long)]
    tau: Option<f64>,
    /// Add the graph channel; defaults to on except for identity.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_graph: Option<bool>,
    /// Add the input embedding back at every layer.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    use_source: Option<bool>,
    /// Per-layer query/key/value projections.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    feature_transform: Option<bool>,
    /// none or relu after each layer.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Nodes per mini-batch; 0 is full batch.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Stop after this many epochs without validation gain; 0 never stops early.
    #[arg(long)]
    patience: Option<usize>,
    /// accuracy, rocauc or mse.
    #[arg(long)]
    metric: Option<MetricKind>,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long)]
    seeds: Option<usize>,
    /// Seeds trained concurrently.
    #[arg(long)]
    jobs: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    common: CommonFlags,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Settings {
    data: Option<PathBuf>,
    cora: Option<PathBuf>,
    synth: Option<String>,
    variant: Variant,
    hidden: usize,
    layers: usize,
    heads: usize,
    tau: f64,
    use_graph: Option<bool>,
    use_source: bool,
    feature_transform: bool,
    activation: Activation,
    lr: f64,
    weight_decay: f64,
    epochs: usize,
    batch_size: usize,
    patience: usize,
    metric: MetricKind,
    seeds: usize,
    jobs: usize,
    seed: u64,
    out: PathBuf,
}

impl Default for Settings {
    fn default() -> Self {
        let model = ModelConfig::preset(Variant::Simple, 1, 1);
        let train = TrainConfig::default();
        Self {
            data: None,
            cora: None,
            synth: None,
            variant: model.variant,
            hidden: model.hidden_dim,
            layers: model.layers,
            heads: model.heads,
            tau: model.tau,
            use_graph: None,
            use_source: model.use_source,
            feature_transform: model.use_feature_transform,
            activation: model.activation,
            lr: train.lr,
            weight_decay: train.weight_decay,
            epochs: train.epochs,
            batch_size: train.batch_size,
            patience: train.patience,
            metric: train.metric,
            seeds: 1,
            jobs: 1,
            seed: 0,
            out: PathBuf::from("runs/train"),
        }
    }
}

impl Settings {
    fn model(&self, input_dim: usize, output_dim: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            input_dim,
            hidden_dim: self.hidden,
            output_dim,
            layers: self.layers,
            heads: self.heads,
            tau: self.tau,
            use_graph: self.use_graph.unwrap_or(self.variant != Variant::Identity),
            use_feature_transform: self.feature_transform,
            use_source: self.use_source,
            activation: self.activation,
        }
    }

    fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            seed,
            metric: self.metric,
        }
    }
}

fn train_seed(s: &Settings, source: &Source, seed: u64) -> CliResult<TrainOutcome> {
    let ds = source.load(seed)?;
    let outputs = if s.metric == MetricKind::Mse { 1 } else { ds.num_classes() };
    Ok(train_loop(&ds, &s.model(ds.features.cols(), outputs), &s.train(seed))?)
}

pub fn run(flags: Flags) -> CliResult<ExitCode> {
    let mut s: Settings = resolve("train", &flags, flags.common.config.as_deref())?;
    s.use_graph = Some(s.use_graph.unwrap_or(s.variant != Variant::Identity));
    let source = Source::select(s.data.as_deref(), s.cora.as_deref(), s.synth.as_deref())?;
    if s.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let mut run = Run::start("train", &s.out)?;
    source.record_inputs(&mut run)?;

    let seeds: Vec<u64> = (0..s.seeds as u64).map(|i| s.seed + i).collect();
    let outcomes = thread_pool(s.jobs)?.install(|| seeds.par_iter().map(|&seed| train_seed(&s, &source, seed)).collect::<Vec<_>>());

    let mut runs = Vec::new();
    let mut tests = Vec::new();
    for (&seed, outcome) in seeds.iter().zip(outcomes) {
        let o = outcome?;
        run.write(&format!("checkpoint-seed{seed}.json"), o.checkpoint.to_json()?.as_bytes())?;
        let mut history = Vec::new();
        write_history_csv(&mut history, &o.history).map_err(|e| CliError::Runtime(e.to_string()))?;
        run.write(&format!("history-seed{seed}.csv"), &history)?;
        println!(
            "seed {seed}: best epoch {}, val {} {:.4}, test {} {:.4}",
            o.best_epoch, s.metric, o.best_val, s.metric, o.test_metric
        );
        runs.push(json!({"seed": seed, "best_epoch": o.best_epoch, "val": o.best_val, "test": o.test_metric}));
        tests.push(o.test_metric);
    }
    let mean = tests.iter().sum::<f64>() / tests.len() as f64;
    let std = (tests.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / tests.len() as f64).sqrt();
    println!("mean test {} {mean:.4} (std {std:.4}) over {} seeds", s.metric, tests.len());
    let summary = json!({"metric": s.metric, "runs": runs, "mean_test": mean, "std_test": std});
    let body = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    run.write("summary.json", body.as_bytes())?;
    run.finish(&s, s.seed)?;
    Ok(ExitCode::SUCCESS)
}
