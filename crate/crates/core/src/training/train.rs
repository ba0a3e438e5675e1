use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::Dataset;
use super::split::SplitPlan;
use crate::autodiff::{softmax_rows, AdamState, AdamW, ParamGrads, TensorError};
use crate::metrics::{accumulate, macro_metrics, Metrics, MetricsError};
use crate::model::{predict, sample_loss, ModelConfig, ModelError, ModelParams};
use crate::smiles::FEATURE_DIM;

/// Samples differentiated concurrently before their gradients are reduced.
/// Bounds peak memory; does not affect results.
const GRAD_CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("split plan does not match dataset: {0}")]
    Plan(String),
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Numeric {
        epoch: usize,
        batch: usize,
        #[source]
        source: ModelError,
    },
    #[error("evaluation after epoch {epoch}: {source}")]
    Evaluation {
        epoch: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    Accuracy,
    MacroF1,
}

impl SelectionMetric {
    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            SelectionMetric::Accuracy => m.accuracy,
            SelectionMetric::MacroF1 => m.macro_f1,
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMetric::Accuracy => "accuracy",
            SelectionMetric::MacroF1 => "macro_f1",
        })
    }
}

impl FromStr for SelectionMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "accuracy" | "acc" => Ok(SelectionMetric::Accuracy),
            "macro_f1" | "f1" => Ok(SelectionMetric::MacroF1),
            other => Err(format!("unknown selection metric {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub hidden: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub selection: SelectionMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            lr: 0.005,
            seed: 42,
            layers: 3,
            heads: 4,
            dim: 64,
            hidden: 128,
            max_epochs: 500,
            weight_decay: 0.01,
            selection: SelectionMetric::Accuracy,
        }
    }
}

impl TrainConfig {
    /// `lr` and `weight_decay` may be zero; everything else must be positive.
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("batch_size", self.batch_size),
            ("layers", self.layers),
            ("heads", self.heads),
            ("dim", self.dim),
            ("hidden", self.hidden),
            ("max_epochs", self.max_epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(TrainError::Config(format!("{name} must be positive")));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning rate {} is not a finite nonnegative number",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config(format!(
                "weight decay {} is invalid",
                self.weight_decay
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(TrainError::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn model_config(&self, classes: usize) -> ModelConfig {
        ModelConfig {
            feature_dim: FEATURE_DIM,
            dim: self.dim,
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            ..ModelConfig::new(classes)
        }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }

    /// `train.*` entries for a checkpoint config block.
    pub fn to_config_block(&self) -> BTreeMap<String, String> {
        [
            ("train.batch_size", self.batch_size.to_string()),
            ("train.lr", self.lr.to_string()),
            ("train.seed", self.seed.to_string()),
            ("train.max_epochs", self.max_epochs.to_string()),
            ("train.weight_decay", self.weight_decay.to_string()),
            ("train.selection", self.selection.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the in-batch predictions, i.e. before each batch's update.
    pub train_accuracy: f64,
    pub val: Metrics,
    /// Which partition `val` was computed on; `train` when the plan has no
    /// validation samples.
    pub selection_set: String,
}

/// Everything needed to plot or audit one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub split: SplitSummary,
    pub config: TrainConfig,
    pub classes: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub mode: String,
    pub fold: usize,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl RunRecord {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// One JSON object per line: a `run` header followed by one `epoch` line
    /// per epoch.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        let header = serde_json::json!({
            "type": "run",
            "split": self.split,
            "config": self.config,
            "classes": self.classes,
            "best_epoch": self.best_epoch,
            "checkpoint": self.checkpoint,
        });
        writeln!(out, "{header}")?;
        for e in &self.epochs {
            let mut line = serde_json::to_value(e).map_err(std::io::Error::other)?;
            line["type"] = "epoch".into();
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub best: ModelParams,
    pub last: ModelParams,
    pub record: RunRecord,
}

fn check_plan(dataset: &Dataset, plan: &SplitPlan) -> Result<(), TrainError> {
    let n = dataset.len();
    for (name, idx) in [
        ("train", &plan.train),
        ("val", &plan.val),
        ("test", &plan.test),
    ] {
        if let Some(&i) = idx.iter().find(|&&i| i >= n) {
            return Err(TrainError::Plan(format!(
                "{name} index {i} beyond {n} samples"
            )));
        }
    }
    if plan.train.is_empty() {
        return Err(TrainError::Plan("empty training set".into()));
    }
    Ok(())
}

/// Class probabilities for the given samples, in order.
pub fn predict_samples(
    dataset: &Dataset,
    indices: &[usize],
    params: &ModelParams,
) -> Result<Vec<Vec<f64>>, ModelError> {
    indices
        .par_iter()
        .map(|&i| {
            let (a, b) = dataset.graphs(i);
            predict(a, b, params)
        })
        .collect()
}

pub fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
            if p > best.1 {
                (i, p)
            } else {
                best
            }
        })
        .0
}

pub fn evaluate(
    dataset: &Dataset,
    indices: &[usize],
    params: &ModelParams,
) -> Result<Metrics, TrainError> {
    let probs = predict_samples(dataset, indices, params)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.label(i)).collect();
    Ok(macro_metrics(&accumulate(
        &preds,
        &labels,
        params.config.classes,
    )?)?)
}

pub fn train(
    dataset: &Dataset,
    plan: &SplitPlan,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let params = ModelParams::init(config.model_config(dataset.classes), config.seed)?;
    train_from(dataset, plan, config, params)
}

/// Trains starting from `params` instead of a fresh initialization.
pub fn train_from(
    dataset: &Dataset,
    plan: &SplitPlan,
    config: &TrainConfig,
    mut params: ModelParams,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    check_plan(dataset, plan)?;
    if params.config.classes < dataset.classes {
        return Err(TrainError::Config(format!(
            "model has {} classes, dataset needs {}",
            params.config.classes, dataset.classes
        )));
    }
    let optimizer = config.optimizer();
    let mut state = AdamState::new(&params.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let (selection_set, selection_idx) = if plan.val.is_empty() {
        ("train", &plan.train)
    } else {
        ("val", &plan.val)
    };

    let mut order = plan.train.clone();
    let mut epochs = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch, samples) in order.chunks(config.batch_size).enumerate() {
            let numeric = |source: ModelError| TrainError::Numeric {
                epoch,
                batch,
                source,
            };
            params.store.zero_grad();
            for chunk in samples.chunks(GRAD_CHUNK) {
                let results: Vec<Result<(f64, usize, ParamGrads), ModelError>> = chunk
                    .par_iter()
                    .map(|&i| {
                        let (a, b) = dataset.graphs(i);
                        let mut tape = params.tape();
                        let (loss, logits) =
                            sample_loss(&mut tape, &params, a, b, dataset.label(i))?;
                        let value = tape.scalar(loss)?;
                        if !value.is_finite() {
                            return Err(TensorError::NonFinite { op: "loss" }.into());
                        }
                        let pred =
                            argmax(softmax_rows(tape.value(logits)).as_slice().unwrap_or(&[]));
                        Ok((value, pred, tape.backward(loss)?))
                    })
                    .collect();
                // fixed summation order keeps reruns bit-identical
                for (r, &i) in results.into_iter().zip(chunk) {
                    let (loss, pred, grads) = r.map_err(numeric)?;
                    loss_sum += loss;
                    correct += usize::from(pred == dataset.label(i));
                    params
                        .store
                        .accumulate(&grads)
                        .map_err(|e| numeric(e.into()))?;
                }
            }
            params.store.scale_grads(1.0 / samples.len() as f64);
            optimizer
                .step(&mut params.store, &mut state)
                .map_err(|e| numeric(e.into()))?;
        }

        let metrics = evaluate(dataset, selection_idx, &params).map_err(|e| match e {
            TrainError::Model(source) => TrainError::Evaluation { epoch, source },
            other => other,
        })?;
        let score = config.selection.of(&metrics);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val: metrics,
            selection_set: selection_set.to_string(),
        };
        debug!(
            "epoch {epoch}: loss {:.5} train_acc {:.4} {selection_set}_{} {:.4}",
            record.train_loss, record.train_accuracy, config.selection, score
        );
        epochs.push(record);
        if best.as_ref().is_none_or(|(_, s, _)| score > *s) {
            best = Some((epoch, score, params.clone()));
        }
    }

    let (best_epoch, best_score, best_params) = best.expect("max_epochs > 0");
    info!(
        "best epoch {best_epoch} with {selection_set} {} {best_score:.4}",
        config.selection
    );
    let record = RunRecord {
        split: SplitSummary {
            mode: plan.mode.to_string(),
            fold: plan.fold,
            seed: plan.seed,
            train: plan.train.len(),
            val: plan.val.len(),
            test: plan.test.len(),
        },
        config: *config,
        classes: params.config.classes,
        epochs,
        best_epoch,
        checkpoint: None,
    };
    Ok(TrainOutcome {
        best: best_params,
        last: params,
        record,
    })
}
