//! Pixel-space corruptions used as the post-hoc baseline against physically
//! faithful processing variants.
//!
//! Parameter tables (version [`CORRUPTION_TABLE_VERSION`]), indexed by severity 1–5:
//!
//! | kind          | parameter                         | 1    | 2    | 3    | 4    | 5    |
//! |---------------|-----------------------------------|------|------|------|------|------|
//! | `gauss_noise` | noise standard deviation          | 0.04 | 0.06 | 0.08 | 0.09 | 0.10 |
//! | `gauss_blur`  | blur σ in pixels                  | 0.4  | 0.6  | 0.7  | 0.8  | 1.0  |
//! | `contrast`    | factor towards the image mean     | 0.75 | 0.5  | 0.4  | 0.3  | 0.15 |
//! | `brightness`  | additive shift of HSV value       | 0.05 | 0.1  | 0.15 | 0.2  | 0.3  |
//! | `saturate`    | multiplicative HSV saturation     | 1.5  | 2    | 3    | 5    | 10   |

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::drift_controls::DriftError;
use crate::isp_static::filters::gaussian_blur;
use crate::raw_io::{RgbImage, Stage};
use crate::scalar::Scalar;

/// Version of the severity tables; bump whenever a value changes.
pub const CORRUPTION_TABLE_VERSION: u32 = 1;

pub const GAUSS_NOISE_SIGMA: [f64; 5] = [0.04, 0.06, 0.08, 0.09, 0.10];
pub const GAUSS_BLUR_SIGMA: [f64; 5] = [0.4, 0.6, 0.7, 0.8, 1.0];
pub const CONTRAST_FACTOR: [f64; 5] = [0.75, 0.5, 0.4, 0.3, 0.15];
pub const BRIGHTNESS_SHIFT: [f64; 5] = [0.05, 0.1, 0.15, 0.2, 0.3];
pub const SATURATION_FACTOR: [f64; 5] = [1.5, 2.0, 3.0, 5.0, 10.0];

/// Severity used by the synthesis baseline.
pub const BASELINE_SEVERITY: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussNoise,
    GaussBlur,
    Contrast,
    Brightness,
    Saturate,
}

impl CorruptionKind {
    pub const ALL: [Self; 5] = [
        Self::GaussNoise,
        Self::GaussBlur,
        Self::Contrast,
        Self::Brightness,
        Self::Saturate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GaussNoise => "gauss_noise",
            Self::GaussBlur => "gauss_blur",
            Self::Contrast => "contrast",
            Self::Brightness => "brightness",
            Self::Saturate => "saturate",
        }
    }

    fn table(self) -> &'static [f64; 5] {
        match self {
            Self::GaussNoise => &GAUSS_NOISE_SIGMA,
            Self::GaussBlur => &GAUSS_BLUR_SIGMA,
            Self::Contrast => &CONTRAST_FACTOR,
            Self::Brightness => &BRIGHTNESS_SHIFT,
            Self::Saturate => &SATURATION_FACTOR,
        }
    }

    /// Tabulated parameter for a severity in `1..=5`.
    pub fn parameter(self, severity: u8) -> Result<f64, DriftError> {
        match severity {
            1..=5 => Ok(self.table()[severity as usize - 1]),
            _ => Err(DriftError::Severity(severity)),
        }
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = DriftError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DriftError::UnknownCorruption(s.to_owned()))
    }
}

/// Corrupt a view at a tabulated severity. Deterministic given `seed`; the
/// output is clipped to `[0, 1]`.
pub fn apply_corruption<T: Scalar>(
    view: &RgbImage<T>,
    kind: CorruptionKind,
    severity: u8,
    seed: u64,
) -> Result<RgbImage<T>, DriftError> {
    Ok(apply_corruption_with(view, kind, kind.parameter(severity)?, seed))
}

/// Corrupt a view with an explicit parameter value (see the module tables for
/// its meaning). Identity parameters (`0` noise, shift or σ; factor `1`)
/// return the clipped input.
pub fn apply_corruption_with<T: Scalar>(view: &RgbImage<T>, kind: CorruptionKind, parameter: f64, seed: u64) -> RgbImage<T> {
    let (h, w) = (view.height(), view.width());
    let mut out = match kind {
        CorruptionKind::GaussNoise => {
            let mut out = view.clone();
            if parameter > 0.0 {
                let normal = Normal::new(0.0, parameter).expect("positive finite sigma");
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for v in out.data_mut() {
                    *v += T::lit(normal.sample(&mut rng));
                }
            }
            out
        }
        CorruptionKind::GaussBlur => {
            if parameter > 0.0 {
                let mut out = view.clone();
                for c in 0..3 {
                    let blurred = gaussian_blur(view.plane(c), h, w, parameter);
                    out.data_mut()[c * h * w..(c + 1) * h * w].copy_from_slice(&blurred);
                }
                out
            } else {
                view.clone()
            }
        }
        CorruptionKind::Contrast => {
            let n = view.data().len().max(1) as f64;
            let mean = view.data().iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
            let (m, c) = (T::lit(mean), T::lit(parameter));
            let mut out = view.clone();
            for v in out.data_mut() {
                *v = (*v - m) * c + m;
            }
            out
        }
        CorruptionKind::Brightness => map_hsv(view, |hsv| [hsv[0], hsv[1], (hsv[2] + parameter).clamp(0.0, 1.0)]),
        CorruptionKind::Saturate => map_hsv(view, |hsv| [hsv[0], (hsv[1] * parameter).clamp(0.0, 1.0), hsv[2]]),
    };
    for v in out.data_mut() {
        *v = v.max(T::zero()).min(T::one());
    }
    out.with_stage(Stage::Corrupted)
}

/// Apply `f` to every pixel in HSV space (hue in `[0, 1)`).
fn map_hsv<T: Scalar>(view: &RgbImage<T>, f: impl Fn([f64; 3]) -> [f64; 3]) -> RgbImage<T> {
    let (h, w) = (view.height(), view.width());
    let plane = h * w;
    let mut out = view.clone();
    let data = out.data_mut();
    for i in 0..plane {
        let rgb = [0, 1, 2].map(|c| view.data()[c * plane + i].to_f64_lossy().clamp(0.0, 1.0));
        let mapped = hsv_to_rgb(f(rgb_to_hsv(rgb)));
        for c in 0..3 {
            data[c * plane + i] = T::lit(mapped[c]);
        }
    }
    out
}

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}
