//! The three dataset-drift controls: synthesis of processing variants,
//! gradient-based forensics over pipeline parameters, and joint optimisation of
//! pipeline and task model.

mod corruptions;
mod diff;
mod forensics;
mod optimization;
mod synthesis;

pub use corruptions::{
    apply_corruption, apply_corruption_with, hsv_to_rgb, rgb_to_hsv, CorruptionKind, BASELINE_SEVERITY,
    BRIGHTNESS_SHIFT, CONTRAST_FACTOR, CORRUPTION_TABLE_VERSION, GAUSS_BLUR_SIGMA, GAUSS_NOISE_SIGMA,
    SATURATION_FACTOR,
};
pub use diff::{diff_images, ImageDiff};
pub use forensics::{
    forensics_sweep, lambda_slug, run_forensics, write_forensics_reports, ForensicsConfig, ForensicsReport,
    DEFAULT_LAMBDA_GRID,
};
pub use optimization::{
    run_drift_optimization, summary_table, write_optimization_runs, FoldTrajectory, OptimizationConfig,
    OptimizationMode, OptimizationRun,
};
pub use synthesis::{
    config_slug, dataset_targets, run_synthesis, synthesize_views, write_synthesis_report, CorruptionScore,
    SynthesisConfig, SynthesisReport, WorstPair,
};

use std::path::Path;

use crate::isp_static::IspError;
use crate::raw_io::{atomic_write, Label, RawImage, RawIoError};
use crate::scalar::Scalar;
use crate::task_models::{Architecture, Metric, Sample, TaskError, Target};
use crate::tensorcore::{Tape, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DriftError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Isp(#[from] IspError),
    #[error(transparent)]
    Io(#[from] RawIoError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown corruption {0:?}")]
    UnknownCorruption(String),
    #[error("severity must lie in 1..=5, got {0}")]
    Severity(u8),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("report: {0}")]
    Report(String),
}

impl DriftError {
    /// True for failures caused by non-finite losses or gradients.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Self::Task(TaskError::NumericAbort { .. }))
    }
}

/// Network architecture, metric and per-item targets implied by the labels.
pub(crate) fn task_setup<T: Scalar>(raws: &[RawImage<T>]) -> Result<(Architecture, Metric, Vec<Target>), DriftError> {
    let labels = raws
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.label
                .as_ref()
                .ok_or_else(|| DriftError::InsufficientData(format!("item {i} has no label")))
        })
        .collect::<Result<Vec<&Label>, _>>()?;
    let first = labels
        .first()
        .ok_or_else(|| DriftError::InsufficientData("empty dataset".into()))?;
    let targets: Vec<Target> = labels.iter().map(|l| Target::from_label(l)).collect();
    match first {
        Label::Class(_) => {
            let mut classes = 0;
            for t in &targets {
                match t {
                    Target::Class(c) => classes = classes.max(c + 1),
                    Target::Mask(_) => return Err(TaskError::Label("mixed class and mask labels".into()).into()),
                }
            }
            Ok((
                Architecture::Classifier {
                    classes: classes.max(2),
                },
                Metric::Accuracy,
                targets,
            ))
        }
        Label::Mask(_) => {
            if targets.iter().any(|t| matches!(t, Target::Class(_))) {
                return Err(TaskError::Label("mixed class and mask labels".into()).into());
            }
            Ok((Architecture::Segmenter, Metric::Iou, targets))
        }
    }
}

/// Contiguous cross-validation split: fold `f` holds out items
/// `f·n/folds .. (f+1)·n/folds`. Datasets with alternating classes keep every
/// held-out block balanced whatever the fold count. Returns `(train, test)`
/// index lists per fold.
pub fn fold_split(n: usize, folds: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>, DriftError> {
    if folds < 2 {
        return Err(DriftError::Config(format!("need at least 2 folds, got {folds}")));
    }
    if n < 2 * folds {
        return Err(DriftError::InsufficientData(format!(
            "{n} items cannot fill {folds} folds with at least two items each"
        )));
    }
    Ok((0..folds)
        .map(|f| {
            let block = f * n / folds..(f + 1) * n / folds;
            (0..n).partition(|i| !block.contains(i))
        })
        .collect())
}

/// Mean and population standard deviation.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Shortest round-trip decimal form, so reports are stable byte-for-byte.
pub fn format_f64(v: f64) -> String {
    format!("{v}")
}

/// Atomically write a CSV table; returns the file name.
pub(crate) fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<String, DriftError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let report = |e: csv::Error| DriftError::Report(e.to_string());
    w.write_record(header).map_err(report)?;
    for row in rows {
        w.write_record(row).map_err(report)?;
    }
    let bytes = w.into_inner().map_err(|e| DriftError::Report(e.to_string()))?;
    atomic_write(&dir.join(name), &bytes)?;
    Ok(name.to_owned())
}

/// Per-batch channel standardisation of an `[N, 3, H, W]` tensor.
pub(crate) fn standardize<T: Scalar>(batch: Tensor<T>) -> Result<Tensor<T>, DriftError> {
    let mut tape = Tape::new();
    let x = tape.constant(batch);
    let y = tape.standardize_channels(x, T::lit(crate::isp_param::STANDARDIZE_EPS))?;
    Ok(tape.value(y).clone())
}

/// Per-channel mean and standard deviation over a set of `[3, H, W]` views.
pub fn channel_stats<T: Scalar>(samples: &[Sample<T>]) -> [(f64, f64); 3] {
    std::array::from_fn(|c| {
        mean_std(samples.iter().flat_map(|s| {
            let plane = s.view.len() / 3;
            s.view.data()[c * plane..(c + 1) * plane].iter().map(|v| v.to_f64_lossy())
        }))
    })
}

/// Standardise views with fixed statistics (typically those of the training views).
pub fn apply_channel_stats<T: Scalar>(samples: &[Sample<T>], stats: &[(f64, f64); 3]) -> Vec<Sample<T>> {
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            let plane = s.view.len() / 3;
            for (c, &(mean, std)) in stats.iter().enumerate() {
                let (m, inv) = (T::lit(mean), T::lit(1.0 / (std + crate::isp_param::STANDARDIZE_EPS)));
                for v in &mut s.view.data_mut()[c * plane..(c + 1) * plane] {
                    *v = (*v - m) * inv;
                }
            }
            s
        })
        .collect()
}
