//! Multi-class evaluation: accuracy and macro-averaged precision, recall and F1.
//!
//! Undefined per-class ratios (0/0) count as 0, and classes that never occur
//! still take part in the macro mean over the full label set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("prediction and label lists differ in length: {preds} vs {labels}")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("label subset is empty")]
    EmptySubset,
    #[error("no samples carry a label from the subset")]
    NoMatchingSamples,
}

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<(), MetricsError> {
        for index in [truth, predicted] {
            if index >= self.classes {
                return Err(MetricsError::IndexOutOfRange {
                    index,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    fn column_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }

    fn row_sum(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(truth, p)).sum()
    }

    /// Precision, recall and F1 of one class.
    pub fn class_scores(&self, class: usize) -> ClassScores {
        let tp = self.get(class, class) as f64;
        let predicted = self.column_sum(class) as f64;
        let actual = self.row_sum(class) as f64;
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        ClassScores {
            precision,
            recall,
            f1,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
}

impl Metrics {
    /// `key=value` lines in a fixed order.
    pub fn to_key_values(&self) -> String {
        format!(
            "accuracy={}\nmacro_f1={}\nmacro_precision={}\nmacro_recall={}\n",
            self.accuracy, self.macro_f1, self.macro_precision, self.macro_recall
        )
    }
}

pub fn accumulate(
    preds: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in preds.iter().zip(labels) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// Accuracy plus macro averages over every class of `cm`.
pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<Metrics, MetricsError> {
    let all: Vec<usize> = (0..cm.classes()).collect();
    macro_over(cm, &all)
}

fn macro_over(cm: &ConfusionMatrix, classes: &[usize]) -> Result<Metrics, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let k = classes.len() as f64;
    let (mut p, mut r, mut f) = (0.0, 0.0, 0.0);
    for &c in classes {
        let s = cm.class_scores(c);
        p += s.precision;
        r += s.recall;
        f += s.f1;
    }
    Ok(Metrics {
        accuracy: cm.trace() as f64 / total as f64,
        macro_f1: f / k,
        macro_precision: p / k,
        macro_recall: r / k,
    })
}

/// Metrics restricted to samples whose true label lies in `subset`; macro
/// averages run over the subset classes only. Predictions outside the subset
/// still count as errors and still feed the subset classes' precision.
pub fn stratified_metrics(
    preds: &[usize],
    labels: &[usize],
    classes: usize,
    subset: &[usize],
) -> Result<Metrics, MetricsError> {
    if subset.is_empty() {
        return Err(MetricsError::EmptySubset);
    }
    if let Some(&index) = subset.iter().find(|&&c| c >= classes) {
        return Err(MetricsError::IndexOutOfRange { index, classes });
    }
    let mut unique = subset.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let (kept_p, kept_l): (Vec<usize>, Vec<usize>) = preds
        .iter()
        .zip(labels)
        .filter(|(_, t)| unique.binary_search(t).is_ok())
        .map(|(&p, &t)| (p, t))
        .unzip();
    if kept_l.is_empty() {
        return Err(MetricsError::NoMatchingSamples);
    }
    let cm = accumulate(&kept_p, &kept_l, classes)?;
    macro_over(&cm, &unique)
}

/// Parses `"0-3,7,35-64"` style label lists.
pub fn parse_label_subset(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad label range {part:?}"))?;
                let hi: usize = hi
                    .trim()
                    .parse()
                    .map_err(|_| format!("bad label range {part:?}"))?;
                if lo > hi {
                    return Err(format!("empty label range {part:?}"));
                }
                out.extend(lo..=hi);
            }
            None => out.push(part.parse().map_err(|_| format!("bad label {part:?}"))?),
        }
    }
    if out.is_empty() {
        return Err("label subset is empty".into());
    }
    Ok(out)
}
