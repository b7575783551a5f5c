//! Deterministic synthetic Bayer scenes standing in for real raw captures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::raw_io::{mosaic, CfaLayout, Label, RawImage, RawIoError, RgbImage, Stage};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Disks,
    Stripes,
    Gradient,
    NoiseTexture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    None,
    Class(u32),
    /// Binary mask of the rasterised disks (only meaningful for [`SceneKind::Disks`]).
    DiskMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub size: usize,
    pub seed: u64,
    pub label: LabelRule,
    /// Amplitude of the per-pixel grain added on top of the scene content.
    pub grain: f64,
    pub cfa: CfaLayout,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, size: usize, seed: u64) -> Self {
        Self {
            kind,
            size,
            seed,
            label: LabelRule::None,
            grain: 0.02,
            cfa: CfaLayout::default(),
        }
    }
}

/// Per-item seed derivation; keeps item `i` independent of how many items precede it.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Disk {
    cy: f64,
    cx: f64,
    r: f64,
    color: [f64; 3],
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

/// Render a labelled raw frame. Identical specs give bit-identical frames.
pub fn synth_scene<T: Scalar>(spec: &SceneSpec) -> Result<RawImage<T>, RawIoError> {
    let n = spec.size;
    if n == 0 || n % 2 != 0 {
        return Err(RawIoError::OddDimensions { height: n, width: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nf = n as f64;
    let base = random_color(&mut rng, 0.15, 0.4);
    let mut rgb = vec![[0.0f64; 3]; n * n];
    let mut mask = vec![0u8; n * n];

    match spec.kind {
        SceneKind::Disks => {
            let count = rng.gen_range(2..=4);
            let disks: Vec<Disk> = (0..count)
                .map(|_| {
                    let r = rng.gen_range(nf / 10.0..nf / 5.0);
                    Disk {
                        cy: rng.gen_range(r..nf - r),
                        cx: rng.gen_range(r..nf - r),
                        r,
                        color: random_color(&mut rng, 0.45, 0.75),
                    }
                })
                .collect();
            for y in 0..n {
                for x in 0..n {
                    let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                    let hit = disks
                        .iter()
                        .rev()
                        .find(|d| (py - d.cy).powi(2) + (px - d.cx).powi(2) <= d.r * d.r);
                    rgb[y * n + x] = hit.map_or(base, |d| d.color);
                    mask[y * n + x] = u8::from(hit.is_some());
                }
            }
        }
        SceneKind::Stripes => {
            let theta = rng.gen_range(0.0..std::f64::consts::PI);
            let period = rng.gen_range(nf / 8.0..nf / 4.0);
            let phase = rng.gen_range(0.0..period);
            let color = random_color(&mut rng, 0.45, 0.75);
            let (s, c) = theta.sin_cos();
            for y in 0..n {
                for x in 0..n {
                    let t = (x as f64 * c + y as f64 * s + phase).rem_euclid(period);
                    rgb[y * n + x] = if t < period / 2.0 { color } else { base };
                }
            }
        }
        SceneKind::Gradient => {
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let slope = random_color(&mut rng, 0.1, 0.4);
            let (s, c) = theta.sin_cos();
            for y in 0..n {
                for x in 0..n {
                    let t = ((x as f64 / nf - 0.5) * c + (y as f64 / nf - 0.5) * s) + 0.5;
                    rgb[y * n + x] = std::array::from_fn(|k| base[k] + slope[k] * t);
                }
            }
        }
        SceneKind::NoiseTexture => {
            rgb.iter_mut().for_each(|p| *p = base);
        }
    }

    if spec.grain > 0.0 {
        for p in rgb.iter_mut() {
            let lum = rng.gen_range(-spec.grain..spec.grain);
            for v in p.iter_mut() {
                *v += lum;
            }
        }
    }

    let image = RgbImage::from_fn(n, n, Stage::Other, |c, y, x| {
        T::lit(rgb[y * n + x][c].clamp(0.0, 1.0))
    });
    let label = match spec.label {
        LabelRule::None => None,
        LabelRule::Class(c) => Some(Label::Class(c)),
        LabelRule::DiskMask => Some(Label::Mask(mask)),
    };
    Ok(mosaic(&image, spec.cfa)?.with_label(label))
}

/// Grain amplitudes of the two texture classes.
pub const TEXTURE_GRAIN: [f64; 2] = [0.02, 0.06];

/// Labelled scene collections used by the bundled experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Two classes: disks (0) and stripes (1).
    Shapes,
    /// Two classes of flat scenes differing only in fine grain amplitude, a
    /// texture cue that the sharpening and denoising choices rescale.
    Texture,
    /// Disk scenes with binary disk masks.
    DiskMasks,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub cfa: CfaLayout,
}

impl DatasetSpec {
    pub fn is_segmentation(&self) -> bool {
        self.kind == DatasetKind::DiskMasks
    }

    pub fn num_classes(&self) -> usize {
        match self.kind {
            DatasetKind::Shapes | DatasetKind::Texture => 2,
            DatasetKind::DiskMasks => 1,
        }
    }
}

/// Build a dataset; classification classes alternate so that every contiguous
/// split stays balanced.
pub fn synth_dataset<T: Scalar>(spec: &DatasetSpec) -> Result<Vec<RawImage<T>>, RawIoError> {
    (0..spec.count)
        .map(|i| {
            let seed = derive_seed(spec.seed, i as u64);
            let class = (i % 2) as u32;
            let scene = match spec.kind {
                DatasetKind::Shapes => SceneSpec {
                    kind: if class == 0 { SceneKind::Disks } else { SceneKind::Stripes },
                    label: LabelRule::Class(class),
                    ..SceneSpec::new(SceneKind::Disks, spec.size, seed)
                },
                DatasetKind::Texture => SceneSpec {
                    kind: SceneKind::NoiseTexture,
                    label: LabelRule::Class(class),
                    grain: TEXTURE_GRAIN[class as usize],
                    ..SceneSpec::new(SceneKind::NoiseTexture, spec.size, seed)
                },
                DatasetKind::DiskMasks => SceneSpec {
                    label: LabelRule::DiskMask,
                    grain: 0.03,
                    ..SceneSpec::new(SceneKind::Disks, spec.size, seed)
                },
            };
            synth_scene(&SceneSpec { cfa: spec.cfa, ..scene })
        })
        .collect()
}
