//! Accuracy, IoU and CSV metric logs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::raw_io::atomic_write;
use crate::scalar::Scalar;
use crate::task_models::TaskError;
use crate::tensorcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Iou,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Accuracy => "accuracy",
            Self::Iou => "iou",
        }
    }
}

/// Index of the largest logit per row of an `[N, K]` tensor; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape().last().copied().unwrap_or(1).max(1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// `|pred ∩ truth| / |pred ∪ truth|`; an empty union scores 1.
pub fn iou(pred: &[bool], truth: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        inter += usize::from(p && t);
        union += usize::from(p || t);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pixels whose probability `sigmoid(logit)` exceeds 0.5.
pub fn threshold_logits<T: Scalar>(logits: &[T]) -> Vec<bool> {
    logits.iter().map(|&z| z > T::zero()).collect()
}

/// One row of a metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

impl MetricRecord {
    pub fn new(step: u64, split: &str, metric: &str, value: f64, seed: u64) -> Self {
        Self {
            step,
            split: split.to_owned(),
            metric: metric.to_owned(),
            value,
            seed,
        }
    }
}

/// CSV text with header `step,split,metric,value,seed`.
pub fn metrics_to_csv(records: &[MetricRecord]) -> Result<String, TaskError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| TaskError::Csv(e.to_string()))?;
    }
    if records.is_empty() {
        w.write_record(["step", "split", "metric", "value", "seed"])
            .map_err(|e| TaskError::Csv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| TaskError::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| TaskError::Csv(e.to_string()))
}

pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricRecord>, TaskError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| TaskError::Csv(e.to_string()))
}

/// Write a metric log atomically.
pub fn write_metrics(path: &Path, records: &[MetricRecord]) -> Result<(), TaskError> {
    atomic_write(path, metrics_to_csv(records)?.as_bytes())?;
    Ok(())
}
