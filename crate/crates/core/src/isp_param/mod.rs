//! The parametrized, differentiable pipeline: every stage expressed with
//! trainable parameters on the tape, the default initialisation, the
//! static-equivalence parameters and a text document format.

mod document;
mod forward;
mod gradcheck;
mod params;

pub use document::{deserialize_params, serialize_params, PARAMS_SCHEMA};
pub use forward::{
    forward, forward_traced, process_param, process_param_batch, raw_batch, record_params, ForwardTrace, ParamVars, STANDARDIZE_EPS,
};
pub use gradcheck::{
    pipeline_gradcheck, pipeline_gradcheck_with, CheckTarget, GradcheckConfig, GradcheckReport, GroupCheck, BOUNDARY_MARGIN,
    RELATIVE_FLOOR, STENCIL_REACH,
};
pub use params::{
    default_params, static_equivalence_params, ParamGroup, ParamGroupMask, PipelineParams, GAMMA_FLOOR,
};
