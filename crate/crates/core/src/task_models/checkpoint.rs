//! Model checkpoints as TOML documents of named tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::raw_io::{atomic_write, RawIoError};
use crate::scalar::Scalar;
use crate::task_models::model::{Architecture, TaskModel};
use crate::task_models::TaskError;
use crate::tensorcore::Tensor;

pub const CHECKPOINT_SCHEMA: &str = "rawdrift-model/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    schema: String,
    architecture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<usize>,
    tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Serialise a model; values round-trip bit-identically.
pub fn checkpoint_to_string<T: Scalar>(model: &TaskModel<T>) -> Result<String, TaskError> {
    let arch = model.architecture();
    let doc = CheckpointDoc {
        schema: CHECKPOINT_SCHEMA.into(),
        architecture: arch.name().into(),
        classes: match arch {
            Architecture::Classifier { classes } => Some(classes),
            Architecture::Segmenter => None,
        },
        tensors: model
            .names()
            .iter()
            .zip(model.params())
            .map(|(name, t)| NamedTensor {
                name: name.clone(),
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
            })
            .collect(),
    };
    toml::to_string(&doc).map_err(|e| TaskError::Checkpoint(e.to_string()))
}

pub fn checkpoint_from_str<T: Scalar>(text: &str) -> Result<TaskModel<T>, TaskError> {
    let doc: CheckpointDoc = toml::from_str(text).map_err(|e| TaskError::Checkpoint(e.message().to_owned()))?;
    if doc.schema != CHECKPOINT_SCHEMA {
        return Err(TaskError::Checkpoint(format!("unsupported schema {:?}", doc.schema)));
    }
    let arch = match (doc.architecture.as_str(), doc.classes) {
        ("classifier", Some(classes)) if classes > 0 => Architecture::Classifier { classes },
        ("segmenter", None) => Architecture::Segmenter,
        (other, _) => return Err(TaskError::Checkpoint(format!("bad architecture {other:?}"))),
    };
    let tensors = doc
        .tensors
        .into_iter()
        .map(|t| {
            let values = t.values.into_iter().map(T::lit).collect();
            Ok((t.name, Tensor::new(&t.shape, values)?))
        })
        .collect::<Result<Vec<_>, TaskError>>()?;
    TaskModel::from_parts(arch, tensors)
}

pub fn save_checkpoint<T: Scalar>(model: &TaskModel<T>, path: &Path) -> Result<(), TaskError> {
    atomic_write(path, checkpoint_to_string(model)?.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<TaskModel<T>, TaskError> {
    let text = std::fs::read_to_string(path).map_err(|e| RawIoError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    checkpoint_from_str(&text)
}
