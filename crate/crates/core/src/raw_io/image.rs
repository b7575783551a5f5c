use serde::{Deserialize, Serialize};

use crate::raw_io::{CfaLayout, Channel, RawIoError};
use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

/// Supervision attached to a raw frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Label {
    Class(u32),
    /// Row-major `H x W` binary mask with values 0 or 1.
    Mask(Vec<u8>),
}

/// Single-plane Bayer mosaic normalised to `[0, 1]` from 16-bit counts.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
    pub cfa: CfaLayout,
    pub label: Option<Label>,
}

impl<T: Scalar> RawImage<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>, cfa: CfaLayout) -> Result<Self, RawIoError> {
        if height % 2 != 0 || width % 2 != 0 || height == 0 || width == 0 {
            return Err(RawIoError::OddDimensions { height, width });
        }
        if data.len() != height * width {
            return Err(RawIoError::Truncated);
        }
        if data.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(RawIoError::OutOfRange);
        }
        Ok(Self {
            height,
            width,
            data,
            cfa,
            label: None,
        })
    }

    pub fn with_label(mut self, label: Option<Label>) -> Self {
        self.label = label;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    /// Multiply every sample by `factor` and clamp to `[0, 1]`.
    pub fn scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = (*v * factor).max(T::zero()).min(T::one()));
        out
    }

    /// `[1, H, W]` tensor view of the mosaic.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[1, self.height, self.width], self.data.clone()).expect("consistent shape")
    }

    pub fn cast<U: Scalar>(&self) -> RawImage<U> {
        RawImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            cfa: self.cfa,
            label: self.label.clone(),
        }
    }

    pub fn class_id(&self) -> Option<u32> {
        match self.label {
            Some(Label::Class(c)) => Some(c),
            _ => None,
        }
    }

    pub fn mask(&self) -> Option<&[u8]> {
        match &self.label {
            Some(Label::Mask(m)) => Some(m),
            _ => None,
        }
    }
}

/// Output of one processing stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Demosaic,
    WhiteBalance,
    ColorCorrect,
    Sharpen,
    Denoise,
    Gamma,
    Standardized,
    Corrupted,
    Other,
}

/// Planar `3 x H x W` image. Values lie in `[0, 1]` after gamma correction;
/// intermediate stages may leave that range.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
    pub stage: Stage,
}

impl<T: Scalar> RgbImage<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>, stage: Stage) -> Result<Self, RawIoError> {
        if data.len() != 3 * height * width {
            return Err(RawIoError::Truncated);
        }
        Ok(Self {
            height,
            width,
            data,
            stage,
        })
    }

    pub fn from_fn(height: usize, width: usize, stage: Stage, f: impl Fn(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            height,
            width,
            data,
            stage,
        }
    }

    pub fn from_tensor(t: &Tensor<T>, stage: Stage) -> Result<Self, RawIoError> {
        match *t.shape() {
            [3, h, w] | [1, 3, h, w] => Self::new(h, w, t.data().to_vec(), stage),
            _ => Err(RawIoError::Truncated),
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[3, self.height, self.width], self.data.clone()).expect("consistent shape")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn with_stage(mut self, stage: Stage) -> Self {
        self.stage = stage;
        self
    }

    pub fn cast<U: Scalar>(&self) -> RgbImage<U> {
        RgbImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            stage: self.stage,
        }
    }
}

/// Sample an RGB image at the CFA sites: each pixel keeps the channel its filter selects.
pub fn mosaic<T: Scalar>(image: &RgbImage<T>, cfa: CfaLayout) -> Result<RawImage<T>, RawIoError> {
    let (h, w) = (image.height(), image.width());
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let c = cfa.channel_at(y, x) as usize;
            data.push(image.get(c, y, x).max(T::zero()).min(T::one()));
        }
    }
    RawImage::new(h, w, data, cfa)
}

/// Per-pixel site masks (`[R, G, B]`), 1 where the filter matches.
pub fn site_masks(cfa: CfaLayout, height: usize, width: usize) -> [Vec<bool>; 3] {
    let mut masks = [vec![false; height * width], vec![false; height * width], vec![false; height * width]];
    for y in 0..height {
        for x in 0..width {
            let c: Channel = cfa.channel_at(y, x);
            masks[c as usize][y * width + x] = true;
        }
    }
    masks
}
