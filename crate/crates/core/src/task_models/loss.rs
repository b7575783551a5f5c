//! Task losses on recorded logits.

use std::sync::Arc;

use crate::scalar::Scalar;
use crate::task_models::TaskError;
use crate::tensorcore::{Tape, Tensor, TensorError, Var};

/// Dice smoothing constant of the segmentation loss.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Mean softmax cross-entropy over the batch.
    CrossEntropy,
    /// Binary cross-entropy on logits plus `1 − Dice`.
    BceDice,
    /// `½·‖logits − target‖²`.
    SqL2,
}

/// Supervision for one batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets<T> {
    Classes(Vec<usize>),
    /// Flattened binary masks matching the logits' element order.
    Masks(Arc<[T]>),
    Values(Tensor<T>),
}

impl<T: Scalar> Targets<T> {
    pub fn natural_loss(&self) -> LossKind {
        match self {
            Self::Classes(_) => LossKind::CrossEntropy,
            Self::Masks(_) => LossKind::BceDice,
            Self::Values(_) => LossKind::SqL2,
        }
    }
}

/// Record `kind` on the tape. The targets must match the loss kind.
pub fn loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &Targets<T>, kind: LossKind) -> Result<Var, TaskError> {
    match (kind, targets) {
        (LossKind::CrossEntropy, Targets::Classes(c)) => Ok(tape.cross_entropy(logits, c)?),
        (LossKind::BceDice, Targets::Masks(m)) => Ok(tape.bce_dice(logits, m.clone(), T::lit(DICE_SMOOTH))?),
        (LossKind::SqL2, Targets::Values(t)) => {
            let target = tape.constant(t.clone());
            let diff = tape.sub(logits, target)?;
            let sq = tape.sq_l2(diff);
            Ok(tape.scale(sq, T::lit(0.5)))
        }
        _ => Err(TaskError::Tensor(TensorError::InvalidOperand(format!(
            "{kind:?} loss does not accept these targets"
        )))),
    }
}
