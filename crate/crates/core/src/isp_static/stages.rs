//! Individual static pipeline stages.

use crate::isp_static::constants::{flatten, K_BLUR, K_SHARP, M_RGB_2_YUV, M_YUV_2_RGB, UNSHARP_AMOUNT, UNSHARP_RADIUS};
use crate::isp_static::demosaic;
use crate::isp_static::filters::{correlate, gaussian_blur, median3};
use crate::isp_static::IspError;
use crate::raw_io::{RawImage, RgbImage, Stage};
use crate::scalar::Scalar;
use crate::tensorcore::Padding;

use super::config::{DemosaicAlgo, DenoiseAlgo, SharpenAlgo};

/// Index into the four black-level offsets for pixel `(row, col)`:
/// (odd, odd) → 0, (even, odd) → 1, (odd, even) → 2, (even, even) → 3.
#[inline]
pub fn black_level_index(row: usize, col: usize) -> usize {
    match (row % 2, col % 2) {
        (1, 1) => 0,
        (0, 1) => 1,
        (1, 0) => 2,
        _ => 3,
    }
}

/// Subtract per-site offsets, clamping the result into `[0, 1]`.
pub fn black_level<T: Scalar>(raw: &RawImage<T>, bl: &[f64; 4]) -> RawImage<T> {
    let (h, w) = (raw.height(), raw.width());
    let offs: Vec<T> = bl.iter().map(|&v| T::lit(v)).collect();
    let data = (0..h * w)
        .map(|i| {
            let v = raw.data()[i] - offs[black_level_index(i / w, i % w)];
            v.max(T::zero()).min(T::one())
        })
        .collect();
    RawImage::new(h, w, data, raw.cfa)
        .expect("clamped values of a valid frame")
        .with_label(raw.label.clone())
}

pub fn demosaic<T: Scalar>(raw: &RawImage<T>, algo: DemosaicAlgo) -> RgbImage<T> {
    let (h, w) = (raw.height(), raw.width());
    match algo {
        DemosaicAlgo::Bilinear => demosaic::bilinear(raw.data(), h, w, raw.cfa),
        DemosaicAlgo::Malvar2004 => demosaic::malvar2004(raw.data(), h, w, raw.cfa),
        DemosaicAlgo::Menon2007 => demosaic::menon2007(raw.data(), h, w, raw.cfa),
    }
}

pub fn white_balance<T: Scalar>(view: &RgbImage<T>, wb: &[f64; 3]) -> RgbImage<T> {
    let hw = view.height() * view.width();
    let mut out = view.clone().with_stage(Stage::WhiteBalance);
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v *= T::lit(wb[i / hw]);
    }
    out
}

fn apply_matrix<T: Scalar>(view: &RgbImage<T>, m: &[[f64; 3]; 3], stage: Stage) -> RgbImage<T> {
    let hw = view.height() * view.width();
    let m: Vec<T> = m.iter().flatten().map(|&v| T::lit(v)).collect();
    let src = view.data();
    let mut out = vec![T::zero(); 3 * hw];
    for p in 0..hw {
        let px = [src[p], src[hw + p], src[2 * hw + p]];
        for c in 0..3 {
            out[c * hw + p] = m[3 * c] * px[0] + m[3 * c + 1] * px[1] + m[3 * c + 2] * px[2];
        }
    }
    RgbImage::new(view.height(), view.width(), out, stage).expect("same shape")
}

pub fn color_correct<T: Scalar>(view: &RgbImage<T>, matrix: &[[f64; 3]; 3]) -> RgbImage<T> {
    apply_matrix(view, matrix, Stage::ColorCorrect)
}

pub fn rgb_to_yuv<T: Scalar>(view: &RgbImage<T>) -> RgbImage<T> {
    apply_matrix(view, &M_RGB_2_YUV, view.stage)
}

pub fn yuv_to_rgb<T: Scalar>(view: &RgbImage<T>) -> RgbImage<T> {
    apply_matrix(view, &M_YUV_2_RGB, view.stage)
}

fn per_channel<T: Scalar>(view: &RgbImage<T>, stage: Stage, f: impl Fn(&[T]) -> Vec<T>) -> RgbImage<T> {
    let mut data = Vec::with_capacity(view.data().len());
    for c in 0..3 {
        data.extend(f(view.plane(c)));
    }
    RgbImage::new(view.height(), view.width(), data, stage).expect("same shape")
}

/// Channel-wise sharpening of a YUV view.
pub fn sharpen<T: Scalar>(view: &RgbImage<T>, algo: SharpenAlgo) -> RgbImage<T> {
    let (h, w) = (view.height(), view.width());
    match algo {
        SharpenAlgo::SharpFilter => {
            let k = flatten(&K_SHARP);
            per_channel(view, Stage::Sharpen, |p| correlate(p, h, w, &k, 3, Padding::Reflect))
        }
        SharpenAlgo::UnsharpMask => {
            let amount = T::lit(UNSHARP_AMOUNT);
            per_channel(view, Stage::Sharpen, |p| {
                let blurred = gaussian_blur(p, h, w, UNSHARP_RADIUS);
                p.iter().zip(blurred).map(|(&v, b)| v + amount * (v - b)).collect()
            })
        }
    }
}

/// Channel-wise denoising of a YUV view (the conversion back to RGB is done by the composer).
pub fn denoise<T: Scalar>(view: &RgbImage<T>, algo: DenoiseAlgo) -> RgbImage<T> {
    let (h, w) = (view.height(), view.width());
    match algo {
        DenoiseAlgo::Gaussian => {
            let k = flatten(&K_BLUR);
            per_channel(view, Stage::Denoise, |p| correlate(p, h, w, &k, 5, Padding::Reflect))
        }
        DenoiseAlgo::Median => per_channel(view, Stage::Denoise, |p| median3(p, h, w)),
    }
}

/// Clip to `[0, 1]`, then raise to `1/γ`.
pub fn gamma_correct<T: Scalar>(view: &RgbImage<T>, gamma: f64) -> Result<RgbImage<T>, IspError> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(IspError::InvalidGamma(gamma));
    }
    let e = T::lit(1.0 / gamma);
    let mut out = view.clone().with_stage(Stage::Gamma);
    for v in out.data_mut() {
        *v = v.max(T::zero()).min(T::one()).powf(e);
    }
    Ok(out)
}
