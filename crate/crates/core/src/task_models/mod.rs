//! Desk-scale task networks Φ_Task, their losses, optimizers and metrics.
//!
//! Models are recorded on the same tape as the parametrized pipeline so that
//! task-loss gradients reach the pipeline parameters.

mod checkpoint;
mod loss;
mod metrics;
mod model;
mod optimizer;
mod training;

pub use checkpoint::{checkpoint_from_str, checkpoint_to_string, load_checkpoint, save_checkpoint, CHECKPOINT_SCHEMA};
pub use loss::{loss, LossKind, Targets, DICE_SMOOTH};
pub use metrics::{
    argmax_rows, iou, metrics_from_csv, metrics_to_csv, threshold_logits, write_metrics, Metric, MetricRecord,
};
pub use model::{Architecture, ModelVars, TaskModel};
pub use optimizer::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use training::{
    batch_schedule, evaluate, fit, mean_score, score_items, stack, stack_targets, train_step, Batch, BatchInput,
    PipelineTrainer, Sample, Target,
};

use crate::isp_static::IspError;
use crate::raw_io::RawIoError;
use crate::tensorcore::TensorError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TaskError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Isp(#[from] IspError),
    #[error(transparent)]
    Io(#[from] RawIoError),
    #[error("non-finite {what} at step {step}; step aborted")]
    NumericAbort { step: u64, what: &'static str },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("label error: {0}")]
    Label(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("metric log: {0}")]
    Csv(String),
}
