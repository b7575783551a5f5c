//! Drift forensics: adversarial search over pipeline parameters for settings
//! that degrade a fixed task model while staying close to the baseline view.
//!
//! The objective minimised over θ̃ is
//! `λ · mean_i ‖V_i − Ṽ_i‖₂² − L(Ṽ, Y)`, where `V` is the baseline view (held
//! fixed), `Ṽ` the view under θ̃, and `L` the task loss. The squared norm is
//! averaged over the images of the batch.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift_controls::{format_f64, task_setup, write_csv, DriftError};
use crate::isp_param::{forward, raw_batch, record_params, serialize_params, ParamGroupMask, PipelineParams};
use crate::raw_io::{atomic_write, RawImage};
use crate::scalar::Scalar;
use crate::task_models::{
    loss, mean_score, score_items, stack_targets, Metric, OptimizerConfig, OptimizerState, TaskModel, Target,
    Targets,
};
use crate::tensorcore::{Tape, Tensor};

/// Default λ grid of the sweep.
pub const DEFAULT_LAMBDA_GRID: [f64; 8] = [0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e6];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForensicsConfig {
    pub lambda: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    #[serde(default = "ParamGroupMask::all")]
    pub mask: ParamGroupMask,
    #[serde(default)]
    pub seed: u64,
}

fn default_steps() -> usize {
    20
}
fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::adam(1e-2)
}

impl ForensicsConfig {
    pub fn new(lambda: f64, mask: ParamGroupMask) -> Self {
        Self {
            lambda,
            steps: default_steps(),
            optimizer: default_optimizer(),
            mask,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DriftError> {
        if !(self.lambda >= 0.0) || self.lambda.is_infinite() {
            return Err(DriftError::Config(format!("lambda must be finite and ≥ 0, got {}", self.lambda)));
        }
        if !(self.optimizer.lr >= 0.0) || !self.optimizer.lr.is_finite() {
            return Err(DriftError::Config("learning rate must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForensicsReport<T> {
    pub lambda: f64,
    pub mask: ParamGroupMask,
    pub steps: usize,
    pub seed: u64,
    pub metric: Metric,
    /// Objective on the optimisation batch at θ_0 … θ_k (k = steps unless aborted).
    pub objective: Vec<f64>,
    /// Index into `objective` of the reported iterate (the lowest objective seen).
    pub best_step: usize,
    /// True when a non-finite objective or gradient stopped the search early.
    pub aborted: bool,
    pub batch_score_baseline: f64,
    pub batch_score: f64,
    /// Batch mean of per-image `‖V − Ṽ‖₂²` on the optimisation batch.
    pub batch_l2: f64,
    pub score_baseline: f64,
    pub score: f64,
    /// Batch mean of per-image `‖V − Ṽ‖₂²` on the held-out batch.
    pub l2: f64,
    /// The reported θ̃.
    pub params: PipelineParams<T>,
}

impl<T> ForensicsReport<T> {
    pub fn initial_objective(&self) -> f64 {
        self.objective[0]
    }

    pub fn final_objective(&self) -> f64 {
        self.objective[self.best_step]
    }
}

/// A raw batch with its supervision and baseline view.
struct Prepared<T> {
    raw: Tensor<T>,
    cfa: crate::raw_io::CfaLayout,
    targets: Targets<T>,
    items: Vec<Target>,
    baseline: Tensor<T>,
}

fn prepare<T: Scalar>(raws: &[RawImage<T>], base: &PipelineParams<T>) -> Result<Prepared<T>, DriftError> {
    let (_, _, items) = task_setup(raws)?;
    let refs: Vec<&RawImage<T>> = raws.iter().collect();
    let (raw, cfa) = raw_batch(&refs)?;
    let baseline = view(&raw, cfa, base)?;
    let item_refs: Vec<&Target> = items.iter().collect();
    Ok(Prepared {
        targets: stack_targets(&item_refs)?,
        raw,
        cfa,
        items,
        baseline,
    })
}

fn view<T: Scalar>(raw: &Tensor<T>, cfa: crate::raw_io::CfaLayout, params: &PipelineParams<T>) -> Result<Tensor<T>, DriftError> {
    let mut tape = Tape::new();
    let vars = record_params(&mut tape, params, &ParamGroupMask::none())?;
    let r = tape.constant(raw.clone());
    let out = forward(&mut tape, r, cfa, &vars, params.output_standardize)?;
    Ok(tape.value(out).clone())
}

/// Score and mean squared view distance of θ̃ on a prepared batch.
fn assess<T: Scalar>(
    model: &TaskModel<T>,
    batch: &Prepared<T>,
    params: &PipelineParams<T>,
    metric: Metric,
) -> Result<(f64, f64), DriftError> {
    let v = view(&batch.raw, batch.cfa, params)?;
    let logits = model.predict(&v)?;
    let refs: Vec<&Target> = batch.items.iter().collect();
    let score = mean_score(score_items(&logits, &refs, metric)?)?;
    let n = batch.items.len() as f64;
    let l2 = v
        .data()
        .iter()
        .zip(batch.baseline.data())
        .map(|(&a, &b)| (a - b).to_f64_lossy().powi(2))
        .sum::<f64>()
        / n;
    Ok((score, l2))
}

/// Objective and gradients w.r.t. the masked groups at θ̃.
fn objective<T: Scalar>(
    model: &TaskModel<T>,
    batch: &Prepared<T>,
    params: &PipelineParams<T>,
    config: &ForensicsConfig,
    want_grads: bool,
) -> Result<(f64, Vec<(crate::isp_param::ParamGroup, Tensor<T>)>), DriftError> {
    let mut tape = Tape::new();
    let vars = record_params(&mut tape, params, &config.mask)?;
    let r = tape.constant(batch.raw.clone());
    let out = forward(&mut tape, r, batch.cfa, &vars, params.output_standardize)?;
    let v = tape.constant(batch.baseline.clone());
    let diff = tape.sub(out, v)?;
    let sq = tape.sq_l2(diff);
    let n = batch.items.len() as f64;
    let penalty = tape.scale(sq, T::lit(config.lambda / n));
    let model_vars = model.record(&mut tape, false);
    let logits = model.forward(&mut tape, &model_vars, out)?;
    let task = loss(&mut tape, logits, &batch.targets, batch.targets.natural_loss())?;
    let j = tape.sub(penalty, task)?;
    let value = tape.value(j).item()?.to_f64_lossy();
    if !want_grads || !value.is_finite() || config.mask.is_empty() {
        return Ok((value, Vec::new()));
    }
    let mut grads = tape.backward(j)?;
    let out = config
        .mask
        .groups()
        .filter_map(|g| grads.remove(vars.get(g)).map(|t| (g, t)))
        .collect();
    Ok((value, out))
}

/// Adversarial search over θ̃ starting from `base`, with the model frozen.
///
/// The reported θ̃ is the iterate with the lowest objective on the
/// optimisation batch, so the final objective never exceeds the initial one.
/// A non-finite objective or gradient stops the search; the last valid best
/// iterate is reported with `aborted` set.
pub fn run_forensics<T: Scalar>(
    model: &TaskModel<T>,
    base: &PipelineParams<T>,
    opt_raws: &[RawImage<T>],
    test_raws: &[RawImage<T>],
    config: &ForensicsConfig,
) -> Result<ForensicsReport<T>, DriftError> {
    config.validate()?;
    let (_, metric, _) = task_setup(opt_raws)?;
    let opt_batch = prepare(opt_raws, base)?;
    let test_batch = prepare(test_raws, base)?;

    let mut theta = base.clone();
    let mut best = base.clone();
    let mut best_step = 0;
    let mut trajectory = Vec::with_capacity(config.steps + 1);
    let mut aborted = false;
    let mut optimizer = OptimizerState::new(config.optimizer, config.seed);
    for k in 0..=config.steps {
        let (value, grads) = objective(model, &opt_batch, &theta, config, k < config.steps)?;
        if !value.is_finite() {
            aborted = true;
            break;
        }
        trajectory.push(value);
        if value < trajectory[best_step] {
            best_step = k;
            best = theta.clone();
        }
        if k == config.steps || config.mask.is_empty() {
            continue;
        }
        if grads.iter().any(|(_, g)| !g.all_finite()) {
            aborted = true;
            break;
        }
        optimizer.begin_step();
        for (g, grad) in &grads {
            optimizer.update(g.key(), theta.group_mut(*g), grad);
        }
        theta.project();
    }
    if trajectory.is_empty() {
        return Err(DriftError::Task(crate::task_models::TaskError::NumericAbort {
            step: 0,
            what: "forensics objective",
        }));
    }

    let (batch_score_baseline, _) = assess(model, &opt_batch, base, metric)?;
    let (batch_score, batch_l2) = assess(model, &opt_batch, &best, metric)?;
    let (score_baseline, _) = assess(model, &test_batch, base, metric)?;
    let (score, l2) = assess(model, &test_batch, &best, metric)?;
    Ok(ForensicsReport {
        lambda: config.lambda,
        mask: config.mask,
        steps: config.steps,
        seed: config.seed,
        metric,
        objective: trajectory,
        best_step,
        aborted,
        batch_score_baseline,
        batch_score,
        batch_l2,
        score_baseline,
        score,
        l2,
        params: best,
    })
}

/// One search per (λ, mask) pair, in that nesting order; runs are independent
/// and execute in parallel.
pub fn forensics_sweep<T: Scalar>(
    model: &TaskModel<T>,
    base: &PipelineParams<T>,
    opt_raws: &[RawImage<T>],
    test_raws: &[RawImage<T>],
    lambdas: &[f64],
    masks: &[ParamGroupMask],
    template: &ForensicsConfig,
) -> Result<Vec<ForensicsReport<T>>, DriftError> {
    let jobs: Vec<ForensicsConfig> = lambdas
        .iter()
        .flat_map(|&lambda| {
            masks.iter().map(move |&mask| ForensicsConfig {
                lambda,
                mask,
                ..template.clone()
            })
        })
        .collect();
    jobs.par_iter()
        .map(|c| run_forensics(model, base, opt_raws, test_raws, c))
        .collect()
}

/// File-name form of λ: `0`, `0.001`, `1000000` → `lam0`, `lam1e-3`, `lam1e6`.
pub fn lambda_slug(lambda: f64) -> String {
    if lambda == 0.0 {
        "lam0".into()
    } else {
        format!("lam{lambda:e}")
    }
}

/// Write sweep results:
///
/// - `forensics.csv` — one row per (λ, groups)
/// - `forensics_trajectory.csv` — `lambda,groups,step,objective`
/// - `theta_<lam>_<groups>.toml` — the reported θ̃ as a parameter document
pub fn write_forensics_reports<T: Scalar>(reports: &[ForensicsReport<T>], dir: &Path) -> Result<Vec<String>, DriftError> {
    let mut files = Vec::new();
    let header = [
        "lambda",
        "groups",
        "steps",
        "seed",
        "metric",
        "aborted",
        "best_step",
        "objective_initial",
        "objective_final",
        "batch_score_baseline",
        "batch_score",
        "batch_l2",
        "score_baseline",
        "score",
        "l2",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                format_f64(r.lambda),
                r.mask.label(),
                r.steps.to_string(),
                r.seed.to_string(),
                r.metric.name().to_owned(),
                r.aborted.to_string(),
                r.best_step.to_string(),
                format_f64(r.initial_objective()),
                format_f64(r.final_objective()),
                format_f64(r.batch_score_baseline),
                format_f64(r.batch_score),
                format_f64(r.batch_l2),
                format_f64(r.score_baseline),
                format_f64(r.score),
                format_f64(r.l2),
            ]
        })
        .collect();
    files.push(write_csv(dir, "forensics.csv", &header, &rows)?);

    let rows: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|r| {
            r.objective
                .iter()
                .enumerate()
                .map(move |(k, &j)| vec![format_f64(r.lambda), r.mask.label(), k.to_string(), format_f64(j)])
        })
        .collect();
    files.push(write_csv(
        dir,
        "forensics_trajectory.csv",
        &["lambda", "groups", "step", "objective"],
        &rows,
    )?);

    for r in reports {
        let name = format!("theta_{}_{}.toml", lambda_slug(r.lambda), r.mask.label());
        atomic_write(&dir.join(&name), serialize_params(&r.params)?.as_bytes())?;
        files.push(name);
    }
    Ok(files)
}
