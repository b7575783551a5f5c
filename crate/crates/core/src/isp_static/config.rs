//! Discrete and continuous configuration of the static pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::isp_static::constants::{DEFAULT_BLACK_LEVEL, DEFAULT_COLOR_MATRIX, DEFAULT_GAMMA, DEFAULT_WHITE_BALANCE};
use crate::isp_static::IspError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemosaicAlgo {
    Bilinear,
    Malvar2004,
    Menon2007,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpenAlgo {
    SharpFilter,
    UnsharpMask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseAlgo {
    Gaussian,
    Median,
}

impl DemosaicAlgo {
    pub const ALL: [Self; 3] = [Self::Bilinear, Self::Menon2007, Self::Malvar2004];

    pub fn abbrev(self) -> &'static str {
        match self {
            Self::Bilinear => "bi",
            Self::Malvar2004 => "ma",
            Self::Menon2007 => "me",
        }
    }
}

impl SharpenAlgo {
    pub const ALL: [Self; 2] = [Self::SharpFilter, Self::UnsharpMask];

    pub fn abbrev(self) -> &'static str {
        match self {
            Self::SharpFilter => "s",
            Self::UnsharpMask => "u",
        }
    }
}

impl DenoiseAlgo {
    pub const ALL: [Self; 2] = [Self::Median, Self::Gaussian];

    pub fn abbrev(self) -> &'static str {
        match self {
            Self::Gaussian => "ga",
            Self::Median => "me",
        }
    }
}

/// The discrete algorithm triple, written as e.g. `bi,s,me`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AlgoTriple {
    pub demosaic: DemosaicAlgo,
    pub sharpen: SharpenAlgo,
    pub denoise: DenoiseAlgo,
}

impl AlgoTriple {
    pub fn abbrev(&self) -> String {
        format!("{},{},{}", self.demosaic.abbrev(), self.sharpen.abbrev(), self.denoise.abbrev())
    }

    /// File-name friendly form, e.g. `bi-s-me`.
    pub fn slug(&self) -> String {
        self.abbrev().replace(',', "-")
    }
}

impl fmt::Display for AlgoTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.abbrev())
    }
}

impl FromStr for AlgoTriple {
    type Err = IspError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split([',', '-']).map(str::trim).collect();
        let bad = || IspError::UnknownAlgorithm(s.to_owned());
        let [d, sh, dn] = parts[..] else { return Err(bad()) };
        let demosaic = DemosaicAlgo::ALL.into_iter().find(|a| a.abbrev() == d).ok_or_else(bad)?;
        let sharpen = SharpenAlgo::ALL.into_iter().find(|a| a.abbrev() == sh).ok_or_else(bad)?;
        let denoise = DenoiseAlgo::ALL.into_iter().find(|a| a.abbrev() == dn).ok_or_else(bad)?;
        Ok(Self {
            demosaic,
            sharpen,
            denoise,
        })
    }
}

impl Serialize for AlgoTriple {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.abbrev())
    }
}

impl<'de> Deserialize<'de> for AlgoTriple {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Complete static pipeline configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticConfig {
    pub algorithms: AlgoTriple,
    #[serde(default = "default_bl")]
    pub black_level: [f64; 4],
    #[serde(default = "default_wb")]
    pub white_balance: [f64; 3],
    #[serde(default = "default_cc")]
    pub color_matrix: [[f64; 3]; 3],
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_bl() -> [f64; 4] {
    DEFAULT_BLACK_LEVEL
}
fn default_wb() -> [f64; 3] {
    DEFAULT_WHITE_BALANCE
}
fn default_cc() -> [[f64; 3]; 3] {
    DEFAULT_COLOR_MATRIX
}
fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

impl StaticConfig {
    /// Default continuous parameters with the given algorithm triple.
    pub fn new(demosaic: DemosaicAlgo, sharpen: SharpenAlgo, denoise: DenoiseAlgo) -> Self {
        Self {
            algorithms: AlgoTriple {
                demosaic,
                sharpen,
                denoise,
            },
            black_level: DEFAULT_BLACK_LEVEL,
            white_balance: DEFAULT_WHITE_BALANCE,
            color_matrix: DEFAULT_COLOR_MATRIX,
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn from_abbrev(abbrev: &str) -> Result<Self, IspError> {
        let t: AlgoTriple = abbrev.parse()?;
        Ok(Self::new(t.demosaic, t.sharpen, t.denoise))
    }

    pub fn abbrev(&self) -> String {
        self.algorithms.abbrev()
    }

    pub fn validate(&self) -> Result<(), IspError> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(IspError::InvalidGamma(self.gamma));
        }
        let finite = self.black_level.iter().all(|v| v.is_finite())
            && self.white_balance.iter().all(|v| v.is_finite())
            && self.color_matrix.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(IspError::NonFinite("static configuration"));
        }
        Ok(())
    }
}

/// The twelve algorithm combinations with default continuous parameters, in
/// the tabulated order (`bi,s,me`, `bi,s,ga`, `bi,u,me`, …, `ma,u,ga`).
pub fn enumerate_configs() -> Vec<StaticConfig> {
    let mut out = Vec::with_capacity(12);
    for d in DemosaicAlgo::ALL {
        for s in SharpenAlgo::ALL {
            for n in DenoiseAlgo::ALL {
                out.push(StaticConfig::new(d, s, n));
            }
        }
    }
    out
}
