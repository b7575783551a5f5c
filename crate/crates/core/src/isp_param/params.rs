//! Continuous pipeline parameters θ = (θ₁ … θ₇) and trainability masks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::isp_static::constants::{
    flatten, DEFAULT_BLACK_LEVEL, DEFAULT_COLOR_MATRIX, DEFAULT_GAMMA, DEFAULT_WHITE_BALANCE, K_BLUR, K_G, K_RB,
    K_SHARP,
};
use crate::isp_static::{DemosaicAlgo, DenoiseAlgo, IspError, SharpenAlgo, StaticConfig};
use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

/// Lower bound applied to γ after every optimisation update.
pub const GAMMA_FLOOR: f64 = 1e-3;

/// One of the seven parameter groups, in pipeline order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    BlackLevel,
    Demosaic,
    WhiteBalance,
    ColorCorrection,
    Sharpen,
    Denoise,
    Gamma,
}

impl ParamGroup {
    pub const ALL: [Self; 7] = [
        Self::BlackLevel,
        Self::Demosaic,
        Self::WhiteBalance,
        Self::ColorCorrection,
        Self::Sharpen,
        Self::Denoise,
        Self::Gamma,
    ];

    /// Short stage tag: `bl`, `dm`, `wb`, `cc`, `sh`, `dn`, `gc`.
    pub fn tag(self) -> &'static str {
        match self {
            Self::BlackLevel => "bl",
            Self::Demosaic => "dm",
            Self::WhiteBalance => "wb",
            Self::ColorCorrection => "cc",
            Self::Sharpen => "sh",
            Self::Denoise => "dn",
            Self::Gamma => "gc",
        }
    }

    /// Key used in parameter documents.
    pub fn key(self) -> &'static str {
        match self {
            Self::BlackLevel => "black_level",
            Self::Demosaic => "demosaic",
            Self::WhiteBalance => "white_balance",
            Self::ColorCorrection => "color_matrix",
            Self::Sharpen => "sharpen",
            Self::Denoise => "denoise",
            Self::Gamma => "gamma",
        }
    }

    pub fn shape(self) -> &'static [usize] {
        match self {
            Self::BlackLevel => &[4],
            Self::Demosaic => &[3, 3, 3],
            Self::WhiteBalance => &[3],
            Self::ColorCorrection => &[3, 3],
            Self::Sharpen => &[3, 3],
            Self::Denoise => &[5, 5],
            Self::Gamma => &[1],
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ParamGroup {
    type Err = IspError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|g| g.tag() == s || g.key() == s)
            .ok_or_else(|| IspError::Schema(format!("unknown parameter group {s:?}")))
    }
}

/// Per-group trainability flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct ParamGroupMask([bool; 7]);

impl ParamGroupMask {
    pub fn all() -> Self {
        Self([true; 7])
    }

    pub fn none() -> Self {
        Self([false; 7])
    }

    pub fn only(groups: &[ParamGroup]) -> Self {
        let mut m = Self::none();
        for &g in groups {
            m.0[g.index()] = true;
        }
        m
    }

    pub fn contains(&self, g: ParamGroup) -> bool {
        self.0[g.index()]
    }

    pub fn set(&mut self, g: ParamGroup, on: bool) {
        self.0[g.index()] = on;
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&b| b)
    }

    pub fn groups(&self) -> impl Iterator<Item = ParamGroup> + '_ {
        ParamGroup::ALL.into_iter().filter(|g| self.contains(*g))
    }

    /// Compact label such as `bl+wb+gc`, `all` or `none`.
    pub fn label(&self) -> String {
        if *self == Self::all() {
            "all".into()
        } else if self.is_empty() {
            "none".into()
        } else {
            self.groups().map(|g| g.tag()).collect::<Vec<_>>().join("+")
        }
    }
}

impl fmt::Display for ParamGroupMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ParamGroupMask {
    type Err = IspError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "all" => Ok(Self::all()),
            "none" | "" => Ok(Self::none()),
            list => {
                let groups = list
                    .split(['+', ','])
                    .map(str::parse)
                    .collect::<Result<Vec<ParamGroup>, _>>()?;
                Ok(Self::only(&groups))
            }
        }
    }
}

impl Serialize for ParamGroupMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for ParamGroupMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// The parametrized pipeline's continuous parameters.
///
/// Group tensors have the shapes given by [`ParamGroup::shape`]; the demosaic
/// group holds one 3×3 kernel per output channel (R, G, B).
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineParams<T> {
    groups: [Tensor<T>; 7],
    pub output_standardize: bool,
}

impl<T: Scalar> PipelineParams<T> {
    /// Build from group tensors, validating shapes and finiteness.
    pub fn from_groups(groups: [Tensor<T>; 7], output_standardize: bool) -> Result<Self, IspError> {
        let p = Self {
            groups,
            output_standardize,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn group(&self, g: ParamGroup) -> &Tensor<T> {
        &self.groups[g.index()]
    }

    pub fn group_mut(&mut self, g: ParamGroup) -> &mut Tensor<T> {
        &mut self.groups[g.index()]
    }

    pub fn gamma(&self) -> T {
        self.groups[ParamGroup::Gamma.index()].data()[0]
    }

    /// Shapes match, all values finite, γ > 0.
    pub fn validate(&self) -> Result<(), IspError> {
        for g in ParamGroup::ALL {
            let t = self.group(g);
            if t.shape() != g.shape() {
                return Err(IspError::Schema(format!(
                    "{} has shape {:?}, expected {:?}",
                    g.key(),
                    t.shape(),
                    g.shape()
                )));
            }
            if !t.all_finite() {
                return Err(IspError::NonFinite(g.key()));
            }
        }
        let gamma = self.gamma();
        if gamma <= T::zero() {
            return Err(IspError::InvalidGamma(gamma.to_f64_lossy()));
        }
        Ok(())
    }

    /// Clamp γ to at least [`GAMMA_FLOOR`].
    pub fn project(&mut self) {
        let floor = T::lit(GAMMA_FLOOR);
        let g = &mut self.groups[ParamGroup::Gamma.index()].data_mut()[0];
        if *g < floor {
            *g = floor;
        }
    }

    pub fn cast<U: Scalar>(&self) -> PipelineParams<U> {
        PipelineParams {
            groups: std::array::from_fn(|i| self.groups[i].cast()),
            output_standardize: self.output_standardize,
        }
    }

    /// All values, group by group, widened to f64 bit patterns.
    pub fn to_bits(&self) -> Vec<u64> {
        self.groups.iter().flat_map(|t| t.to_bits_vec()).collect()
    }
}

fn tensor<T: Scalar>(g: ParamGroup, values: &[f64]) -> Tensor<T> {
    Tensor::from_f64(g.shape(), values).expect("fixed group shape")
}

/// Default parameters: zero black level, unit gains, identity colour matrix,
/// bilinear demosaic kernels `(K_RB, K_G, K_RB)`, `K_SHARP`, `K_BLUR` and γ = 2.2.
pub fn default_params<T: Scalar>() -> PipelineParams<T> {
    let mut dm = flatten(&K_RB);
    dm.extend(flatten(&K_G));
    dm.extend(flatten(&K_RB));
    PipelineParams {
        groups: [
            tensor(ParamGroup::BlackLevel, &DEFAULT_BLACK_LEVEL),
            tensor(ParamGroup::Demosaic, &dm),
            tensor(ParamGroup::WhiteBalance, &DEFAULT_WHITE_BALANCE),
            tensor(ParamGroup::ColorCorrection, &flatten(&DEFAULT_COLOR_MATRIX)),
            tensor(ParamGroup::Sharpen, &flatten(&K_SHARP)),
            tensor(ParamGroup::Denoise, &flatten(&K_BLUR)),
            tensor(ParamGroup::Gamma, &[DEFAULT_GAMMA]),
        ],
        output_standardize: false,
    }
}

/// Parameters reproducing a static configuration exactly.
///
/// Only the bilinear / sharpening-filter / Gaussian triple has a parametrized
/// counterpart. Equivalence additionally assumes black-level offsets that never
/// push samples below zero (the static stage clamps, the parametrized one does not).
pub fn static_equivalence_params<T: Scalar>(config: &StaticConfig) -> Result<PipelineParams<T>, IspError> {
    config.validate()?;
    let a = config.algorithms;
    if a.demosaic != DemosaicAlgo::Bilinear || a.sharpen != SharpenAlgo::SharpFilter || a.denoise != DenoiseAlgo::Gaussian
    {
        return Err(IspError::Unsupported(config.abbrev()));
    }
    let mut p = default_params::<T>();
    p.groups[ParamGroup::BlackLevel.index()] = tensor(ParamGroup::BlackLevel, &config.black_level);
    p.groups[ParamGroup::WhiteBalance.index()] = tensor(ParamGroup::WhiteBalance, &config.white_balance);
    p.groups[ParamGroup::ColorCorrection.index()] = tensor(ParamGroup::ColorCorrection, &flatten(&config.color_matrix));
    p.groups[ParamGroup::Gamma.index()] = tensor(ParamGroup::Gamma, &[config.gamma]);
    Ok(p)
}
