//! Samples, batches, joint training steps and evaluation.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::isp_param::{forward, record_params, ParamGroupMask, PipelineParams};
use crate::raw_io::{CfaLayout, Label, RgbImage};
use crate::scalar::Scalar;
use crate::task_models::loss::{loss, Targets};
use crate::task_models::metrics::{argmax_rows, iou, threshold_logits, Metric};
use crate::task_models::model::TaskModel;
use crate::task_models::optimizer::OptimizerState;
use crate::task_models::TaskError;
use crate::tensorcore::{Tape, Tensor, TensorError};

/// Supervision for a single item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    /// Row-major binary mask.
    Mask(Vec<u8>),
}

impl Target {
    pub fn from_label(label: &Label) -> Self {
        match label {
            Label::Class(c) => Self::Class(*c as usize),
            Label::Mask(m) => Self::Mask(m.clone()),
        }
    }
}

/// A processed view with its label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    /// `[3, H, W]`.
    pub view: Tensor<T>,
    pub target: Target,
}

impl<T: Scalar> Sample<T> {
    pub fn new(view: &RgbImage<T>, target: Target) -> Self {
        Self {
            view: view.to_tensor(),
            target,
        }
    }
}

/// Stack equally shaped tensors along a new leading axis.
pub fn stack<T: Scalar>(items: &[&Tensor<T>]) -> Result<Tensor<T>, TaskError> {
    let first = items.first().ok_or(TaskError::EmptyDataset)?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(items.len() * first.len());
    for t in items {
        if t.shape() != shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "stack",
                expected: shape,
                found: t.shape().to_vec(),
            }
            .into());
        }
        data.extend_from_slice(t.data());
    }
    let mut full = vec![items.len()];
    full.extend_from_slice(&shape);
    Ok(Tensor::new(&full, data)?)
}

/// Batch supervision from per-item targets (all classes or all masks).
pub fn stack_targets<T: Scalar>(targets: &[&Target]) -> Result<Targets<T>, TaskError> {
    match targets.first() {
        None => Err(TaskError::EmptyDataset),
        Some(Target::Class(_)) => targets
            .iter()
            .map(|t| match t {
                Target::Class(c) => Ok(*c),
                Target::Mask(_) => Err(TaskError::Label("mixed class and mask targets".into())),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Targets::Classes),
        Some(Target::Mask(_)) => {
            let mut out = Vec::new();
            for t in targets {
                match t {
                    Target::Mask(m) => out.extend(m.iter().map(|&b| if b != 0 { T::one() } else { T::zero() })),
                    Target::Class(_) => return Err(TaskError::Label("mixed class and mask targets".into())),
                }
            }
            Ok(Targets::Masks(Arc::from(out)))
        }
    }
}

/// What enters the network: processed views, or raw frames that go through
/// the parametrized pipeline first.
#[derive(Clone, Debug, PartialEq)]
pub enum BatchInput<T> {
    /// `[N, 3, H, W]`.
    Views(Tensor<T>),
    /// `[N, H, W]` mosaics.
    Raw { raw: Tensor<T>, cfa: CfaLayout },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub input: BatchInput<T>,
    pub targets: Targets<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[&Sample<T>]) -> Result<Self, TaskError> {
        let views: Vec<&Tensor<T>> = samples.iter().map(|s| &s.view).collect();
        let targets: Vec<&Target> = samples.iter().map(|s| &s.target).collect();
        Ok(Self {
            input: BatchInput::Views(stack(&views)?),
            targets: stack_targets(&targets)?,
        })
    }
}

/// Pipeline parameters trained jointly with the task model.
pub struct PipelineTrainer<'a, T> {
    pub params: &'a mut PipelineParams<T>,
    /// Groups receiving updates; the others stay fixed.
    pub mask: ParamGroupMask,
    pub optimizer: &'a mut OptimizerState<T>,
}

/// One optimisation step; returns the loss before the update.
///
/// A non-finite loss or gradient aborts the step before any parameter changes.
pub fn train_step<T: Scalar>(
    model: &mut TaskModel<T>,
    optimizer: &mut OptimizerState<T>,
    batch: &Batch<T>,
    pipeline: Option<PipelineTrainer<'_, T>>,
) -> Result<T, TaskError> {
    let mut tape = Tape::new();
    let mut pipe_vars = None;
    let x = match (&batch.input, &pipeline) {
        (BatchInput::Views(v), None) => tape.constant(v.clone()),
        (BatchInput::Raw { raw, cfa }, Some(p)) => {
            let vars = record_params(&mut tape, p.params, &p.mask)?;
            let r = tape.constant(raw.clone());
            let out = forward(&mut tape, r, *cfa, &vars, p.params.output_standardize)?;
            pipe_vars = Some(vars);
            out
        }
        (BatchInput::Views(_), Some(_)) => {
            return Err(TaskError::Label("processed views cannot pass through the pipeline".into()))
        }
        (BatchInput::Raw { .. }, None) => {
            return Err(TaskError::Label("raw batches need pipeline parameters".into()))
        }
    };
    let vars = model.record(&mut tape, true);
    let logits = model.forward(&mut tape, &vars, x)?;
    let l = loss(&mut tape, logits, &batch.targets, batch.targets.natural_loss())?;
    let value = tape.value(l).item()?;
    let step = optimizer.step() + 1;
    if !value.is_finite() {
        return Err(TaskError::NumericAbort { step, what: "loss" });
    }
    let grads = tape.backward(l)?;
    if grads.iter().any(|(_, g)| !g.all_finite()) {
        return Err(TaskError::NumericAbort { step, what: "gradient" });
    }

    optimizer.begin_step();
    for (i, &var) in vars.as_slice().iter().enumerate() {
        if let Some(g) = grads.get(var) {
            let key = model.names()[i].clone();
            optimizer.update(&key, &mut model.params_mut()[i], g);
        }
    }
    if let (Some(p), Some(pv)) = (pipeline, pipe_vars) {
        if !p.mask.is_empty() {
            p.optimizer.begin_step();
            for g in p.mask.groups() {
                if let Some(grad) = grads.get(pv.get(g)) {
                    p.optimizer.update(g.key(), p.params.group_mut(g), grad);
                }
            }
            p.params.project();
        }
    }
    Ok(value)
}

/// Per-epoch shuffled mini-batches of indices into `0..n`, `steps` batches in total.
///
/// Each epoch is an independent permutation drawn from a ChaCha8 stream seeded
/// with `seed`; batches never straddle epochs, and a short final batch is dropped
/// unless the dataset is smaller than one batch.
pub fn batch_schedule(n: usize, batch_size: usize, steps: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch_size = batch_size.clamp(1, n.max(1));
    let mut out = Vec::with_capacity(steps);
    while out.len() < steps && n > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(batch_size) {
            if out.len() == steps {
                break;
            }
            out.push(chunk.to_vec());
        }
    }
    out
}

/// Train on processed views for `steps` steps. Returns the per-step losses.
pub fn fit<T: Scalar>(
    model: &mut TaskModel<T>,
    optimizer: &mut OptimizerState<T>,
    samples: &[Sample<T>],
    steps: usize,
    batch_size: usize,
) -> Result<Vec<f64>, TaskError> {
    if samples.is_empty() {
        return Err(TaskError::EmptyDataset);
    }
    let schedule = batch_schedule(samples.len(), batch_size, steps, optimizer.seed);
    let mut losses = Vec::with_capacity(steps);
    for idx in schedule {
        let items: Vec<&Sample<T>> = idx.iter().map(|&i| &samples[i]).collect();
        let batch = Batch::from_samples(&items)?;
        losses.push(train_step(model, optimizer, &batch, None)?.to_f64_lossy());
    }
    Ok(losses)
}

/// Per-item scores (1/0 correctness, or IoU) for one batch of logits.
pub fn score_items<T: Scalar>(logits: &Tensor<T>, targets: &[&Target], metric: Metric) -> Result<Vec<f64>, TaskError> {
    match metric {
        Metric::Accuracy => {
            let pred = argmax_rows(logits);
            targets
                .iter()
                .zip(pred)
                .map(|(t, p)| match t {
                    Target::Class(c) => Ok(if *c == p { 1.0 } else { 0.0 }),
                    Target::Mask(_) => Err(TaskError::Label("accuracy needs class targets".into())),
                })
                .collect()
        }
        Metric::Iou => {
            let per = logits.len() / targets.len().max(1);
            targets
                .iter()
                .zip(logits.data().chunks(per.max(1)))
                .map(|(t, z)| match t {
                    Target::Mask(m) if m.len() == z.len() => {
                        let truth: Vec<bool> = m.iter().map(|&b| b != 0).collect();
                        Ok(iou(&threshold_logits(z), &truth))
                    }
                    _ => Err(TaskError::Label("IoU needs masks matching the logits".into())),
                })
                .collect()
        }
    }
}

/// Mean of per-item scores, summed in sorted order so the result does not depend
/// on dataset order.
pub fn mean_score(mut scores: Vec<f64>) -> Result<f64, TaskError> {
    if scores.is_empty() {
        return Err(TaskError::EmptyDataset);
    }
    scores.sort_by(f64::total_cmp);
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Score a model on processed views, batching for speed; batches run in parallel
/// and are reduced in a fixed order.
pub fn evaluate<T: Scalar>(
    model: &TaskModel<T>,
    samples: &[Sample<T>],
    metric: Metric,
    batch_size: usize,
) -> Result<f64, TaskError> {
    if samples.is_empty() {
        return Err(TaskError::EmptyDataset);
    }
    let per_batch: Vec<Vec<f64>> = samples
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let views: Vec<&Tensor<T>> = chunk.iter().map(|s| &s.view).collect();
            let logits = model.predict(&stack(&views)?)?;
            let targets: Vec<&Target> = chunk.iter().map(|s| &s.target).collect();
            score_items(&logits, &targets, metric)
        })
        .collect::<Result<_, TaskError>>()?;
    mean_score(per_batch.into_iter().flatten().collect())
}
