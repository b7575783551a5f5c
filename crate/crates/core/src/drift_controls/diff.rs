//! Per-channel difference images between two views.

use crate::drift_controls::DriftError;
use crate::raw_io::{RgbImage, Stage};
use crate::scalar::Scalar;

/// `|A − B|` per channel with summary norms.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDiff<T> {
    pub diff: RgbImage<T>,
    /// Euclidean norm of each channel's difference.
    pub channel_l2: [f64; 3],
    pub channel_max: [f64; 3],
    /// Euclidean norm over all channels.
    pub l2: f64,
    pub max: f64,
}

pub fn diff_images<T: Scalar>(a: &RgbImage<T>, b: &RgbImage<T>) -> Result<ImageDiff<T>, DriftError> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(DriftError::Shape(format!(
            "cannot compare {}x{} with {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let data: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).collect();
    let plane = a.height() * a.width();
    let mut channel_l2 = [0.0; 3];
    let mut channel_max = [0.0f64; 3];
    for c in 0..3 {
        let chunk = &data[c * plane..(c + 1) * plane];
        channel_l2[c] = chunk.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
        channel_max[c] = chunk.iter().map(|v| v.to_f64_lossy()).fold(0.0, f64::max);
    }
    let l2 = channel_l2.iter().map(|v| v * v).sum::<f64>().sqrt();
    let max = channel_max.iter().copied().fold(0.0, f64::max);
    Ok(ImageDiff {
        diff: RgbImage::new(a.height(), a.width(), data, Stage::Other)?,
        channel_l2,
        channel_max,
        l2,
        max,
    })
}
