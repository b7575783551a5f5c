//! Dense tensors, a reverse-mode tape, and a finite-difference gradient oracle.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use kernels::Padding;
pub use tape::{ElementwiseOp, Gradients, Operand, ReduceOp, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("kernel size {0} is even; only odd sizes keep the output aligned")]
    EvenKernel(usize),
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("expected a one-element tensor, found shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("gather index out of range")]
    IndexOutOfRange,
    #[error("target class {0} out of range for {1} classes")]
    TargetOutOfRange(usize, usize),
    #[error("invalid operand for {0}")]
    InvalidOperand(String),
}
