//! Losses, metrics, Adam, mini-batching and the semi-supervised training loop.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Split};
use crate::model::{forward, init_model, predict, Checkpoint, CheckpointMeta, ModelConfig, Params};
use crate::numerics::{Matrix, Primitive, Tape, Var};
use crate::rng::{seeded, shuffle};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Supervision for a set of nodes: class ids, or real-valued rows matching the logits.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<i64>),
    Values(Matrix),
}

impl Targets {
    fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.rows(),
        }
    }

    fn select(&self, rows: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&r| c[r]).collect()),
            Targets::Values(v) => Targets::Values(v.select_rows(rows)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

fn check_mask(mask: &[usize], n: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::Contract("loss/metric mask selects no nodes".into()));
    }
    if let Some(&r) = mask.iter().find(|&&r| r >= n) {
        return Err(Error::Contract(format!("mask index {r} outside {n} nodes")));
    }
    Ok(())
}

fn class_of(label: i64, classes: usize) -> Result<usize> {
    usize::try_from(label)
        .ok()
        .filter(|&c| c < classes)
        .ok_or_else(|| Error::Contract(format!("label {label} is not one of {classes} classes")))
}

/// Mean loss over the masked rows, recorded on `tape`.
pub fn loss(tape: &mut Tape, kind: LossKind, logits: Var, targets: &Targets, mask: &[usize]) -> Result<Var> {
    let shape = tape.value(logits).shape();
    check_mask(mask, shape.0)?;
    if targets.len() != shape.0 {
        return Err(Error::dim("loss targets", (targets.len(), 1), shape));
    }
    let rows = Arc::new(mask.to_vec());
    match (kind, targets) {
        (LossKind::CrossEntropy, Targets::Classes(labels)) => {
            let labels = mask.iter().map(|&r| class_of(labels[r], shape.1)).collect::<Result<Vec<_>>>()?;
            tape.apply(Primitive::CrossEntropy { rows, labels: Arc::new(labels) }, &[logits])
        }
        (LossKind::Mse, Targets::Values(target)) => {
            tape.apply(Primitive::Mse { rows, target: Arc::new(target.clone()) }, &[logits])
        }
        (kind, _) => Err(Error::Contract(format!("{kind:?} loss does not match the target kind"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Rocauc,
    Mse,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Mse)
    }

    pub fn loss_kind(self) -> LossKind {
        match self {
            MetricKind::Mse => LossKind::Mse,
            _ => LossKind::CrossEntropy,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Rocauc => "rocauc",
            MetricKind::Mse => "mse",
        })
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(MetricKind::Accuracy),
            "rocauc" => Ok(MetricKind::Rocauc),
            "mse" => Ok(MetricKind::Mse),
            other => Err(Error::Parameter(format!("unknown metric {other:?} (accuracy, rocauc, mse)"))),
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

/// Mann–Whitney statistic with midranks for ties.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC-AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = midrank;
        }
        start = end;
    }
    let pos_rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Evaluates `kind` on the masked rows of `predictions` (logits, or values for `mse`).
pub fn metric(kind: MetricKind, predictions: &Matrix, targets: &Targets, mask: &[usize]) -> Result<f64> {
    check_mask(mask, predictions.rows())?;
    if targets.len() != predictions.rows() {
        return Err(Error::dim("metric targets", (targets.len(), 1), predictions.shape()));
    }
    match (kind, targets) {
        (MetricKind::Accuracy, Targets::Classes(labels)) => {
            let hits = mask
                .iter()
                .filter(|&&r| i64::try_from(argmax(predictions.row(r))).ok() == Some(labels[r]))
                .count();
            Ok(hits as f64 / mask.len() as f64)
        }
        (MetricKind::Rocauc, Targets::Classes(labels)) => {
            let positive = mask
                .iter()
                .map(|&r| match labels[r] {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::UndefinedMetric(format!("ROC-AUC needs binary labels, saw {other}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let scores: Vec<f64> = match predictions.cols() {
                1 => mask.iter().map(|&r| predictions[(r, 0)]).collect(),
                2 => mask.iter().map(|&r| predictions[(r, 1)] - predictions[(r, 0)]).collect(),
                c => return Err(Error::UndefinedMetric(format!("ROC-AUC needs 1 or 2 output columns, got {c}"))),
            };
            roc_auc(&scores, &positive)
        }
        (MetricKind::Mse, Targets::Values(target)) => {
            if target.shape() != predictions.shape() {
                return Err(Error::dim("mse", predictions.shape(), target.shape()));
            }
            let total: f64 = mask
                .iter()
                .flat_map(|&r| predictions.row(r).iter().zip(target.row(r)).map(|(a, b)| (a - b) * (a - b)))
                .sum();
            Ok(total / (mask.len() * predictions.cols()) as f64)
        }
        (kind, _) => Err(Error::Contract(format!("{kind} does not match the target kind"))),
    }
}

/// First and second moments per parameter, plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub first: Params,
    pub second: Params,
    pub t: u64,
}

/// Decoupled weight decay, then one bias-corrected Adam update.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    for (name, g) in grads {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("gradient for unknown parameter {name}")))?;
        if p.shape() != g.shape() {
            return Err(Error::dim("adam_step", p.shape(), g.shape()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let correct1 = 1.0 - ADAM_BETA1.powi(t);
    let correct2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name).expect("checked above");
        let m = state.first.entry(name.clone()).or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
        let v = state.second.entry(name.clone()).or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
        let mut updated = p.clone();
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let gij = g[(i, j)];
                m[(i, j)] = ADAM_BETA1 * m[(i, j)] + (1.0 - ADAM_BETA1) * gij;
                v[(i, j)] = ADAM_BETA2 * v[(i, j)] + (1.0 - ADAM_BETA2) * gij * gij;
                let m_hat = m[(i, j)] / correct1;
                let v_hat = v[(i, j)] / correct2;
                let decayed = p[(i, j)] * (1.0 - lr * weight_decay);
                updated[(i, j)] = decayed - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        *p = updated;
    }
    Ok(())
}

/// Seeded shuffle of `0..n` cut into contiguous chunks; `batch_size = 0` gives one full batch in order.
pub fn minibatch_partition(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if batch_size == 0 || n == 0 {
        return vec![order];
    }
    shuffle(&mut seeded(seed, 0x5eed_0000 + epoch as u64), &mut order);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// `0` trains full-batch.
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping; `0` never stops early.
    pub patience: usize,
    pub seed: u64,
    pub metric: MetricKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.01, weight_decay: 5e-4, epochs: 200, batch_size: 0, patience: 0, seed: 0, metric: MetricKind::Accuracy }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr = {} must be finite and non-negative", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Parameter(format!("weight_decay = {} must be non-negative", self.weight_decay)));
        }
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub test_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Test metric of the best validation epoch.
    pub test_metric: f64,
}

/// Targets the dataset supervises under `metric`: class ids, or the label as a one-column value.
pub fn dataset_targets(ds: &Dataset, metric: MetricKind) -> Targets {
    match metric {
        MetricKind::Mse => Targets::Values(Matrix::column(ds.labels.iter().map(|&l| l as f64).collect())),
        _ => Targets::Classes(ds.labels.clone()),
    }
}

fn is_better(kind: MetricKind, candidate: f64, best: f64) -> bool {
    if kind.higher_is_better() {
        candidate > best
    } else {
        candidate < best
    }
}

/// Trains from a fresh initialisation and keeps the best-validation parameters.
pub fn train_loop(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let train_idx = ds.indices(Split::Train);
    let val_idx = ds.indices(Split::Val);
    let test_idx = ds.indices(Split::Test);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Contract("training needs non-empty train and validation splits".into()));
    }
    if model_cfg.input_dim != ds.features.cols() {
        return Err(Error::dim("model input_dim", (1, model_cfg.input_dim), ds.features.shape()));
    }
    let targets = dataset_targets(ds, cfg.metric);
    let graph = if model_cfg.use_graph {
        Some(ds.graph.as_ref().ok_or_else(|| Error::Contract("use_graph is set but the dataset has no graph".into()))?)
    } else {
        None
    };
    let mut in_train = vec![false; ds.n()];
    train_idx.iter().for_each(|&i| in_train[i] = true);

    let mut params = init_model(model_cfg, cfg.seed)?;
    let mut adam = AdamState::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, f64, Params)> = None;
    for epoch in 0..cfg.epochs {
        let mut weighted_loss = 0.0;
        let mut counted = 0usize;
        for batch in minibatch_partition(ds.n(), cfg.batch_size, cfg.seed, epoch) {
            let mask: Vec<usize> = (0..batch.len()).filter(|&local| in_train[batch[local]]).collect();
            if mask.is_empty() {
                continue;
            }
            let full = batch.len() == ds.n() && cfg.batch_size == 0;
            let x = if full { ds.features.clone() } else { ds.features.select_rows(&batch) };
            let sub_graph = graph.map(|g| if full { g.clone() } else { g.induced(&batch) });
            let batch_targets = if full { targets.clone() } else { targets.select(&batch) };
            let mut tape = Tape::new();
            let logits = forward(&mut tape, &params, &x, sub_graph.as_ref(), model_cfg)?;
            let objective = loss(&mut tape, cfg.metric.loss_kind(), logits, &batch_targets, &mask)?;
            weighted_loss += tape.value(objective).as_scalar().expect("loss is 1x1") * mask.len() as f64;
            counted += mask.len();
            let grads = tape.backward(objective)?;
            adam_step(&mut params, grads.params(), &mut adam, cfg.lr, cfg.weight_decay)?;
        }
        let out = predict(&params, &ds.features, graph, model_cfg)?;
        let val = metric(cfg.metric, &out, &targets, &val_idx)?;
        let test = if test_idx.is_empty() { f64::NAN } else { metric(cfg.metric, &out, &targets, &test_idx)? };
        history.push(EpochRecord { epoch, train_loss: weighted_loss / counted as f64, val_metric: val, test_metric: test });
        let improved = best.as_ref().is_none_or(|(_, b, _, _)| is_better(cfg.metric, val, *b));
        if improved {
            best = Some((epoch, val, test, params.clone()));
        }
        let since_best = epoch - best.as_ref().expect("set on first epoch").0;
        if cfg.patience > 0 && since_best >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_val, test_metric, best_params) = best.expect("at least one epoch ran");
    let mut metrics = BTreeMap::new();
    metrics.insert(format!("val_{}", cfg.metric), best_val);
    metrics.insert(format!("test_{}", cfg.metric), test_metric);
    let meta = CheckpointMeta { epoch: best_epoch, seed: cfg.seed, metrics };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model_cfg.clone(), best_params, meta)?,
        history,
        best_epoch,
        best_val,
        test_metric,
    })
}

pub fn write_history_csv(out: &mut impl Write, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_metric,test_metric")?;
    for r in history {
        writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_metric, r.test_metric)?;
    }
    Ok(())
}
