//! Differentiable camera processing pipelines on raw sensor data, and the
//! dataset-drift controls built on them: synthesis of processing variants,
//! gradient-based forensics over pipeline parameters, and joint optimisation
//! of pipeline and task model.

pub mod scalar;
pub mod drift_controls;
pub mod isp_param;
pub mod isp_static;
pub mod raw_io;
pub mod task_models;
pub mod tensorcore;

pub use scalar::Scalar;
pub use tensorcore::{Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;

pub use raw_io::{RawImage, RgbImage};
pub type RawImage32 = RawImage<f32>;
pub type RawImage64 = RawImage<f64>;
pub type RgbImage32 = RgbImage<f32>;
pub type RgbImage64 = RgbImage<f64>;

pub use isp_param::PipelineParams;
pub type PipelineParams32 = PipelineParams<f32>;
pub type PipelineParams64 = PipelineParams<f64>;
