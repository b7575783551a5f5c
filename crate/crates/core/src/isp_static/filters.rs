//! Direct-loop plane filters used by the static pipeline.
//!
//! These are deliberately independent of the tape kernels so that the static
//! and parametrized paths cross-check each other.

use crate::scalar::Scalar;
use crate::tensorcore::kernels::reflect_index;
use crate::tensorcore::Padding;

fn source(i: isize, n: usize, padding: Padding) -> Option<usize> {
    if (0..n as isize).contains(&i) {
        Some(i as usize)
    } else {
        match padding {
            Padding::Zero => None,
            Padding::Reflect => Some(reflect_index(i, n)),
        }
    }
}

/// Same-size correlation of an `h x w` plane with a `k x k` kernel (k odd).
pub fn correlate<T: Scalar>(plane: &[T], h: usize, w: usize, kernel: &[f64], k: usize, padding: Padding) -> Vec<T> {
    debug_assert!(k % 2 == 1 && kernel.len() == k * k && plane.len() == h * w);
    let r = (k / 2) as isize;
    let taps: Vec<T> = kernel.iter().map(|&v| T::lit(v)).collect();
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for i in 0..k {
                let Some(sy) = source(y as isize + i as isize - r, h, padding) else { continue };
                for j in 0..k {
                    let Some(sx) = source(x as isize + j as isize - r, w, padding) else { continue };
                    acc += taps[i * k + j] * plane[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// True convolution (kernel flipped), as opposed to [`correlate`].
pub fn convolve<T: Scalar>(plane: &[T], h: usize, w: usize, kernel: &[f64], k: usize, padding: Padding) -> Vec<T> {
    let flipped: Vec<f64> = kernel.iter().rev().copied().collect();
    correlate(plane, h, w, &flipped, k, padding)
}

/// 1-D symmetric filter along rows (`horizontal`) or columns, mirror padding.
pub fn filter_1d<T: Scalar>(plane: &[T], h: usize, w: usize, taps: &[f64], horizontal: bool) -> Vec<T> {
    let r = (taps.len() / 2) as isize;
    let tv: Vec<T> = taps.iter().map(|&v| T::lit(v)).collect();
    let mut out = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (t, &c) in tv.iter().enumerate() {
                let o = t as isize - r;
                let (sy, sx) = if horizontal {
                    (y, reflect_index(x as isize + o, w))
                } else {
                    (reflect_index(y as isize + o, h), x)
                };
                acc += c * plane[sy * w + sx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Normalised 1-D Gaussian taps with radius `round(truncate·σ)`.
pub fn gaussian_taps(sigma: f64, truncate: f64) -> Vec<f64> {
    let radius = (truncate * sigma + 0.5) as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-0.5 * (x as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with mirror padding.
pub fn gaussian_blur<T: Scalar>(plane: &[T], h: usize, w: usize, sigma: f64) -> Vec<T> {
    let taps = gaussian_taps(sigma, 4.0);
    let rows = filter_1d(plane, h, w, &taps, true);
    filter_1d(&rows, h, w, &taps, false)
}

/// 3×3 median filter with mirror padding.
pub fn median3<T: Scalar>(plane: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); h * w];
    let mut window = [T::zero(); 9];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0;
            for dy in -1..=1isize {
                let sy = reflect_index(y as isize + dy, h);
                for dx in -1..=1isize {
                    let sx = reflect_index(x as isize + dx, w);
                    window[n] = plane[sy * w + sx];
                    n += 1;
                }
            }
            window.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            out[y * w + x] = window[4];
        }
    }
    out
}
