//! Raw frame containers, CFA layouts, synthetic scenes and dataset download.

mod cfa;
mod fetch;
mod files;
mod image;
mod scenes;

use std::path::{Path, PathBuf};

pub use cfa::{CfaLayout, Channel};
pub use fetch::{describe_file, fetch_dataset, DatasetManifest, FetchFailure, FetchReport, ManifestEntry};
pub use files::{
    append_line, atomic_write, decode_pgm16, dequantize16, encode_pgm16, encode_rgb_png, load_raw,
    quantize16, read_mask, read_rgb, sidecar_path, write_mask, write_raw, write_raw_with_provenance,
    write_rgb, write_text, Sidecar,
};
pub use image::{mosaic, site_masks, Label, RawImage, RgbImage, Stage};
pub use scenes::{derive_seed, synth_dataset, synth_scene, DatasetKind, DatasetSpec, LabelRule, SceneKind, SceneSpec, TEXTURE_GRAIN};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RawIoError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("not a binary 16-bit PGM (P5)")]
    NotPgm,
    #[error("PGM maxval {0} is not 65535")]
    BadMaxval(usize),
    #[error("raw dimensions {height}x{width} are not both even and non-zero")]
    OddDimensions { height: usize, width: usize },
    #[error("missing sidecar metadata {0}")]
    MissingSidecar(PathBuf),
    #[error("invalid sidecar: {0}")]
    BadSidecar(String),
    #[error("truncated or inconsistent pixel data")]
    Truncated,
    #[error("raw samples outside [0, 1]")]
    OutOfRange,
    #[error("mask shape does not match the raw frame")]
    MaskShape,
    #[error("png: {0}")]
    Png(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

impl RawIoError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }

    /// Stable numeric code per failure kind.
    pub fn code(&self) -> u8 {
        match self {
            Self::Io { .. } => 1,
            Self::NotPgm => 10,
            Self::BadMaxval(_) => 11,
            Self::OddDimensions { .. } => 12,
            Self::MissingSidecar(_) => 13,
            Self::BadSidecar(_) => 14,
            Self::Truncated => 15,
            Self::OutOfRange => 16,
            Self::MaskShape => 17,
            Self::Png(_) => 18,
            Self::Manifest(_) => 19,
        }
    }
}
