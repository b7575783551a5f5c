//! Drift optimisation: the task model trained on top of a learned pipeline, a
//! frozen pipeline, or directly on demosaiced raw data.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::drift_controls::{fold_split, format_f64, mean_std, standardize, task_setup, write_csv, DriftError};
use crate::isp_param::{default_params, forward, raw_batch, record_params, serialize_params, ParamGroupMask, PipelineParams};
use crate::isp_static::{demosaic_raw, DemosaicAlgo};
use crate::raw_io::{atomic_write, derive_seed, RawImage};
use crate::scalar::Scalar;
use crate::task_models::{
    batch_schedule, mean_score, metrics_to_csv, score_items, stack, stack_targets, train_step, Batch, BatchInput,
    Metric, MetricRecord, OptimizerConfig, OptimizerState, PipelineTrainer, TaskModel, Target,
};
use crate::tensorcore::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationMode {
    /// Pipeline parameters are trained jointly with the task model.
    Learned,
    /// Pipeline parameters stay at their defaults; only the task model trains.
    Frozen,
    /// The task model sees bilinearly demosaiced raw data, without any other stage.
    DirectRaw,
}

impl OptimizationMode {
    pub const ALL: [Self; 3] = [Self::Learned, Self::Frozen, Self::DirectRaw];

    pub fn name(self) -> &'static str {
        match self {
            Self::Learned => "learned",
            Self::Frozen => "frozen",
            Self::DirectRaw => "direct_raw",
        }
    }
}

impl fmt::Display for OptimizationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationConfig {
    pub mode: OptimizationMode,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Validation runs after every `eval_every` training steps (and after the last).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub model_optimizer: OptimizerConfig,
    #[serde(default)]
    pub pipeline_optimizer: OptimizerConfig,
    /// Groups trained in learned mode.
    #[serde(default = "ParamGroupMask::all")]
    pub mask: ParamGroupMask,
    /// Raw frames are multiplied by this factor before processing.
    #[serde(default = "default_intensity")]
    pub intensity: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    500
}
fn default_folds() -> usize {
    3
}
fn default_batch_size() -> usize {
    16
}
fn default_eval_every() -> usize {
    1
}
fn default_intensity() -> f64 {
    1.0
}

impl OptimizationConfig {
    pub fn new(mode: OptimizationMode) -> Self {
        Self {
            mode,
            steps: default_steps(),
            folds: default_folds(),
            batch_size: default_batch_size(),
            eval_every: default_eval_every(),
            model_optimizer: OptimizerConfig::default(),
            pipeline_optimizer: OptimizerConfig::default(),
            mask: ParamGroupMask::all(),
            intensity: default_intensity(),
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), DriftError> {
        if !(self.intensity > 0.0 && self.intensity <= 1.0) {
            return Err(DriftError::Config(format!("intensity must lie in (0, 1], got {}", self.intensity)));
        }
        if self.eval_every == 0 || self.batch_size == 0 {
            return Err(DriftError::Config("eval_every and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Validation scores of one fold, `(step, score)` with step 0 before training.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldTrajectory<T> {
    pub fold: usize,
    pub points: Vec<(u64, f64)>,
    /// Pipeline parameters at the end of training (absent in direct-raw mode).
    pub params: Option<PipelineParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationRun<T> {
    pub mode: OptimizationMode,
    pub intensity: f64,
    pub metric: Metric,
    pub seed: u64,
    /// Pipeline parameters every fold starts from (absent in direct-raw mode).
    pub initial_params: Option<PipelineParams<T>>,
    pub folds: Vec<FoldTrajectory<T>>,
    /// Mean and population standard deviation over all folds and evaluated steps.
    pub mean: f64,
    pub std: f64,
}

impl<T> OptimizationRun<T> {
    pub fn points(&self) -> usize {
        self.folds.iter().map(|f| f.points.len()).sum()
    }
}

struct Data<T> {
    raws: Vec<RawImage<T>>,
    targets: Vec<Target>,
    /// Demosaic-only views for direct-raw mode.
    direct: Option<Vec<Tensor<T>>>,
}

impl<T: Scalar> Data<T> {
    fn targets(&self, idx: &[usize]) -> Result<crate::task_models::Targets<T>, DriftError> {
        let refs: Vec<&Target> = idx.iter().map(|&i| &self.targets[i]).collect();
        Ok(stack_targets(&refs)?)
    }

    fn raw(&self, idx: &[usize]) -> Result<(Tensor<T>, crate::raw_io::CfaLayout), DriftError> {
        let refs: Vec<&RawImage<T>> = idx.iter().map(|&i| &self.raws[i]).collect();
        Ok(raw_batch(&refs)?)
    }

    fn direct_views(&self, idx: &[usize]) -> Result<Tensor<T>, DriftError> {
        let views = self.direct.as_ref().expect("direct-raw views");
        let refs: Vec<&Tensor<T>> = idx.iter().map(|&i| &views[i]).collect();
        standardize(stack(&refs)?)
    }

    /// Network input for a batch of items under the current parameters.
    fn input(&self, idx: &[usize], params: Option<&PipelineParams<T>>) -> Result<Tensor<T>, DriftError> {
        match params {
            None => self.direct_views(idx),
            Some(p) => {
                let (raw, cfa) = self.raw(idx)?;
                let mut tape = Tape::new();
                let vars = record_params(&mut tape, p, &ParamGroupMask::none())?;
                let r = tape.constant(raw);
                let out = forward(&mut tape, r, cfa, &vars, p.output_standardize)?;
                Ok(tape.value(out).clone())
            }
        }
    }
}

fn validate_model<T: Scalar>(
    model: &TaskModel<T>,
    data: &Data<T>,
    test: &[usize],
    params: Option<&PipelineParams<T>>,
    metric: Metric,
    batch_size: usize,
) -> Result<f64, DriftError> {
    let mut scores = Vec::with_capacity(test.len());
    for chunk in test.chunks(batch_size) {
        let logits = model.predict(&data.input(chunk, params)?)?;
        let refs: Vec<&Target> = chunk.iter().map(|&i| &data.targets[i]).collect();
        scores.extend(score_items(&logits, &refs, metric)?);
    }
    Ok(mean_score(scores)?)
}

/// Cross-validated training in one mode, recording the validation metric
/// along the way. Learned and frozen modes start from the default parameters
/// with output standardisation on; direct-raw mode standardises its
/// demosaic-only views per batch in the same way.
pub fn run_drift_optimization<T: Scalar>(
    raws: &[RawImage<T>],
    config: &OptimizationConfig,
) -> Result<OptimizationRun<T>, DriftError> {
    config.validate()?;
    let (arch, metric, targets) = task_setup(raws)?;
    let folds = fold_split(raws.len(), config.folds)?;
    let scaled: Vec<RawImage<T>> = raws.iter().map(|r| r.scaled(T::lit(config.intensity))).collect();
    let direct = (config.mode == OptimizationMode::DirectRaw)
        .then(|| scaled.iter().map(|r| demosaic_raw(r, DemosaicAlgo::Bilinear).to_tensor()).collect());
    let data = Data {
        raws: scaled,
        targets,
        direct,
    };
    let initial = (config.mode != OptimizationMode::DirectRaw).then(|| {
        let mut p = default_params::<T>();
        p.output_standardize = true;
        p
    });
    let mask = match config.mode {
        OptimizationMode::Learned => config.mask,
        _ => ParamGroupMask::none(),
    };

    let mut trajectories = Vec::with_capacity(folds.len());
    for (f, (train, test)) in folds.iter().enumerate() {
        let fold_seed = derive_seed(config.seed, f as u64);
        let mut model = TaskModel::new(arch, fold_seed);
        let mut model_opt = OptimizerState::new(config.model_optimizer, fold_seed);
        let mut pipe_opt = OptimizerState::new(config.pipeline_optimizer, fold_seed);
        let mut params = initial.clone();
        let mut points = vec![(0, validate_model(&model, &data, test, params.as_ref(), metric, config.batch_size)?)];
        let schedule = batch_schedule(train.len(), config.batch_size, config.steps, fold_seed);
        for (k, local) in schedule.iter().enumerate() {
            let idx: Vec<usize> = local.iter().map(|&i| train[i]).collect();
            let targets = data.targets(&idx)?;
            match params.as_mut() {
                Some(p) => {
                    let (raw, cfa) = data.raw(&idx)?;
                    let batch = Batch {
                        input: BatchInput::Raw { raw, cfa },
                        targets,
                    };
                    let trainer = PipelineTrainer {
                        params: p,
                        mask,
                        optimizer: &mut pipe_opt,
                    };
                    train_step(&mut model, &mut model_opt, &batch, Some(trainer))?;
                }
                None => {
                    let batch = Batch {
                        input: BatchInput::Views(data.direct_views(&idx)?),
                        targets,
                    };
                    train_step(&mut model, &mut model_opt, &batch, None)?;
                }
            }
            let step = k + 1;
            if step % config.eval_every == 0 || step == schedule.len() {
                let score = validate_model(&model, &data, test, params.as_ref(), metric, config.batch_size)?;
                points.push((step as u64, score));
            }
        }
        trajectories.push(FoldTrajectory { fold: f, points, params });
    }
    let (mean, std) = mean_std(trajectories.iter().flat_map(|t| t.points.iter().map(|p| p.1)));
    Ok(OptimizationRun {
        mode: config.mode,
        intensity: config.intensity,
        metric,
        seed: config.seed,
        initial_params: initial,
        folds: trajectories,
        mean,
        std,
    })
}

/// Comparison table with one row per run: mode, intensity, metric, mean ± std.
pub fn summary_table<T>(runs: &[OptimizationRun<T>]) -> String {
    let mut out = format!("{:<12} {:>9} {:<9} {:>18}\n", "mode", "intensity", "metric", "mean ± std");
    for r in runs {
        out.push_str(&format!(
            "{:<12} {:>9} {:<9} {:>18}\n",
            r.mode.name(),
            r.intensity,
            r.metric.name(),
            format!("{:.4} ± {:.4}", r.mean, r.std)
        ));
    }
    out
}

/// Write runs:
///
/// - `optimize_summary.csv` — `mode,intensity,metric,mean,std,points`
/// - `trajectory_<mode>_int<intensity>.csv` — metric log rows with split `fold<k>/val`
/// - `params_<mode>_int<intensity>_fold<k>.toml` — final pipeline parameters
pub fn write_optimization_runs<T: Scalar>(runs: &[OptimizationRun<T>], dir: &Path) -> Result<Vec<String>, DriftError> {
    let mut files = Vec::new();
    let rows: Vec<Vec<String>> = runs
        .iter()
        .map(|r| {
            vec![
                r.mode.name().to_owned(),
                format_f64(r.intensity),
                r.metric.name().to_owned(),
                format_f64(r.mean),
                format_f64(r.std),
                r.points().to_string(),
            ]
        })
        .collect();
    files.push(write_csv(
        dir,
        "optimize_summary.csv",
        &["mode", "intensity", "metric", "mean", "std", "points"],
        &rows,
    )?);
    for r in runs {
        let stem = format!("{}_int{}", r.mode.name(), format_f64(r.intensity));
        let records: Vec<MetricRecord> = r
            .folds
            .iter()
            .flat_map(|f| {
                f.points
                    .iter()
                    .map(move |&(step, v)| MetricRecord::new(step, &format!("fold{}/val", f.fold), r.metric.name(), v, r.seed))
            })
            .collect();
        let name = format!("trajectory_{stem}.csv");
        atomic_write(&dir.join(&name), metrics_to_csv(&records)?.as_bytes())?;
        files.push(name);
        for f in &r.folds {
            if let Some(p) = &f.params {
                let name = format!("params_{stem}_fold{}.toml", f.fold);
                atomic_write(&dir.join(&name), serialize_params(p)?.as_bytes())?;
                files.push(name);
            }
        }
    }
    Ok(files)
}
