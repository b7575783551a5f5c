//! The static processing pipeline: black level, demosaicing, white balance,
//! colour correction, sharpening, denoising and gamma correction, with the
//! discrete algorithm choices spanning twelve configurations.

mod config;
pub mod constants;
pub mod demosaic;
pub mod filters;
mod stages;

pub use config::{enumerate_configs, AlgoTriple, DemosaicAlgo, DenoiseAlgo, SharpenAlgo, StaticConfig};
pub use stages::{
    black_level, black_level_index, color_correct, demosaic as demosaic_raw, denoise, gamma_correct, rgb_to_yuv,
    sharpen, white_balance, yuv_to_rgb,
};

use crate::raw_io::{RawImage, RawIoError, RgbImage, Stage};
use crate::scalar::Scalar;
use crate::tensorcore::TensorError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IspError {
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error("configuration {0} cannot be expressed by the parametrized pipeline")]
    Unsupported(String),
    #[error("invalid parameter document: {0}")]
    Schema(String),
    #[error(transparent)]
    Raw(#[from] RawIoError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Run the full static pipeline in its fixed stage order.
pub fn process_static<T: Scalar>(raw: &RawImage<T>, config: &StaticConfig) -> Result<RgbImage<T>, IspError> {
    config.validate()?;
    let algos = config.algorithms;
    let v = black_level(raw, &config.black_level);
    let v = demosaic_raw(&v, algos.demosaic);
    let v = white_balance(&v, &config.white_balance);
    let v = color_correct(&v, &config.color_matrix);
    let v = sharpen(&rgb_to_yuv(&v), algos.sharpen);
    let v = yuv_to_rgb(&denoise(&v, algos.denoise)).with_stage(Stage::Denoise);
    gamma_correct(&v, config.gamma)
}
