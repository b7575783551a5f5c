//! Versioned text document for pipeline parameters.

use serde::{Deserialize, Serialize};

use crate::isp_param::params::{ParamGroup, PipelineParams};
use crate::isp_static::IspError;
use crate::scalar::Scalar;
use crate::tensorcore::Tensor;

pub const PARAMS_SCHEMA: &str = "rawdrift-params/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamDocument {
    schema: String,
    black_level: Vec<f64>,
    demosaic: Vec<Vec<Vec<f64>>>,
    white_balance: Vec<f64>,
    color_matrix: Vec<Vec<f64>>,
    sharpen: Vec<Vec<f64>>,
    denoise: Vec<Vec<f64>>,
    gamma: f64,
    #[serde(default)]
    output_standardize: bool,
}

fn widen<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64_lossy()).collect()
}

fn rows(v: Vec<f64>, n: usize) -> Vec<Vec<f64>> {
    v.chunks(n).map(<[f64]>::to_vec).collect()
}

/// Render parameters as a TOML document. Values use the shortest decimal form
/// that parses back to the identical float.
pub fn serialize_params<T: Scalar>(params: &PipelineParams<T>) -> Result<String, IspError> {
    params.validate()?;
    let dm = widen(params.group(ParamGroup::Demosaic));
    let doc = ParamDocument {
        schema: PARAMS_SCHEMA.into(),
        black_level: widen(params.group(ParamGroup::BlackLevel)),
        demosaic: dm.chunks(9).map(|k| rows(k.to_vec(), 3)).collect(),
        white_balance: widen(params.group(ParamGroup::WhiteBalance)),
        color_matrix: rows(widen(params.group(ParamGroup::ColorCorrection)), 3),
        sharpen: rows(widen(params.group(ParamGroup::Sharpen)), 3),
        denoise: rows(widen(params.group(ParamGroup::Denoise)), 5),
        gamma: params.gamma().to_f64_lossy(),
        output_standardize: params.output_standardize,
    };
    toml::to_string(&doc).map_err(|e| IspError::Schema(e.to_string()))
}

fn group<T: Scalar>(g: ParamGroup, flat: Vec<f64>) -> Result<Tensor<T>, IspError> {
    if flat.len() != g.shape().iter().product::<usize>() {
        return Err(IspError::Schema(format!("{} must have shape {:?}", g.key(), g.shape())));
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(IspError::NonFinite(g.key()));
    }
    Ok(Tensor::new(g.shape(), flat.into_iter().map(T::lit).collect())?)
}

fn flat_rows(g: ParamGroup, m: Vec<Vec<f64>>, n: usize) -> Result<Vec<f64>, IspError> {
    if m.len() != n || m.iter().any(|r| r.len() != n) {
        return Err(IspError::Schema(format!("{} must be {n}x{n}", g.key())));
    }
    Ok(m.into_iter().flatten().collect())
}

/// Parse and validate a parameter document.
pub fn deserialize_params<T: Scalar>(text: &str) -> Result<PipelineParams<T>, IspError> {
    let doc: ParamDocument = toml::from_str(text).map_err(|e| IspError::Schema(e.message().to_owned()))?;
    if doc.schema != PARAMS_SCHEMA {
        return Err(IspError::Schema(format!("unsupported schema {:?}", doc.schema)));
    }
    if !doc.gamma.is_finite() {
        return Err(IspError::NonFinite("gamma"));
    }
    if doc.gamma <= 0.0 {
        return Err(IspError::InvalidGamma(doc.gamma));
    }
    if doc.demosaic.len() != 3 {
        return Err(IspError::Schema("demosaic must hold three 3x3 kernels".into()));
    }
    let mut dm = Vec::with_capacity(27);
    for k in doc.demosaic {
        dm.extend(flat_rows(ParamGroup::Demosaic, k, 3)?);
    }
    let groups = [
        group(ParamGroup::BlackLevel, doc.black_level)?,
        group(ParamGroup::Demosaic, dm)?,
        group(ParamGroup::WhiteBalance, doc.white_balance)?,
        group(ParamGroup::ColorCorrection, flat_rows(ParamGroup::ColorCorrection, doc.color_matrix, 3)?)?,
        group(ParamGroup::Sharpen, flat_rows(ParamGroup::Sharpen, doc.sharpen, 3)?)?,
        group(ParamGroup::Denoise, flat_rows(ParamGroup::Denoise, doc.denoise, 5)?)?,
        group(ParamGroup::Gamma, vec![doc.gamma])?,
    ];
    PipelineParams::from_groups(groups, doc.output_standardize)
}
