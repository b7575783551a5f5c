//! Recording the parametrized pipeline on a differentiation tape.

use std::sync::Arc;

use crate::isp_param::params::{ParamGroup, ParamGroupMask, PipelineParams};
use crate::isp_static::constants::{flatten, M_RGB_2_YUV, M_YUV_2_RGB};
use crate::isp_static::{black_level_index, IspError};
use crate::raw_io::{CfaLayout, RawImage, RawIoError, RgbImage, Stage};
use crate::scalar::Scalar;
use crate::tensorcore::{Padding, Tape, Tensor, Var};

/// Epsilon of the optional output standardisation.
pub const STANDARDIZE_EPS: f64 = 1e-5;

/// Tape handles of the seven parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamVars {
    groups: [Var; 7],
}

impl ParamVars {
    pub fn get(&self, g: ParamGroup) -> Var {
        self.groups[g.index()]
    }
}

/// Record every group as a leaf; groups in `mask` are trainable.
pub fn record_params<T: Scalar>(
    tape: &mut Tape<T>,
    params: &PipelineParams<T>,
    mask: &ParamGroupMask,
) -> Result<ParamVars, IspError> {
    params.validate()?;
    let groups = ParamGroup::ALL.map(|g| tape.leaf(params.group(g).clone(), mask.contains(g)));
    Ok(ParamVars { groups })
}

/// A batch of equally sized raw frames sharing one CFA layout, as an `[N, H, W]` tensor.
pub fn raw_batch<T: Scalar>(raws: &[&RawImage<T>]) -> Result<(Tensor<T>, CfaLayout), IspError> {
    let first = raws.first().ok_or(IspError::Raw(RawIoError::Truncated))?;
    let (h, w, cfa) = (first.height(), first.width(), first.cfa);
    let mut data = Vec::with_capacity(raws.len() * h * w);
    for r in raws {
        if r.height() != h || r.width() != w || r.cfa != cfa {
            return Err(IspError::Raw(RawIoError::Truncated));
        }
        data.extend_from_slice(r.data());
    }
    Ok((Tensor::new(&[raws.len(), h, w], data)?, cfa))
}

fn constant_matrix<T: Scalar>(tape: &mut Tape<T>, m: &[[f64; 3]; 3]) -> Var {
    tape.constant(Tensor::from_f64(&[3, 3], &flatten(m)).expect("3x3"))
}

/// Handles to the output view and to the values entering the final clip.
#[derive(Clone, Copy, Debug)]
pub struct ForwardTrace {
    pub output: Var,
    pub pre_clip: Var,
}

/// Run the seven stages on an `[N, H, W]` raw batch already on the tape.
/// Returns the `[N, 3, H, W]` view.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    raw: Var,
    cfa: CfaLayout,
    vars: &ParamVars,
    output_standardize: bool,
) -> Result<Var, IspError> {
    Ok(forward_traced(tape, raw, cfa, vars, output_standardize)?.output)
}

/// [`forward`], additionally exposing the pre-clip view.
pub fn forward_traced<T: Scalar>(
    tape: &mut Tape<T>,
    raw: Var,
    cfa: CfaLayout,
    vars: &ParamVars,
    output_standardize: bool,
) -> Result<ForwardTrace, IspError> {
    let [n, h, w] = tape.value(raw).shape()[..] else {
        return Err(IspError::Raw(RawIoError::Truncated));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(IspError::Raw(RawIoError::OddDimensions { height: h, width: w }));
    }
    let hw = h * w;

    // BL: subtract the per-site offset (unclamped).
    let bl_index: Arc<[Option<u32>]> = (0..n * hw)
        .map(|i| Some(black_level_index((i % hw) / w, i % w) as u32))
        .collect();
    let bl_map = tape.gather(vars.get(ParamGroup::BlackLevel), bl_index, &[n, h, w])?;
    let v = tape.sub(raw, bl_map)?;

    // DM: scatter samples into sparse R/G/B planes, then filter each with its own kernel.
    let mut plane_index = Vec::with_capacity(n * 3 * hw);
    for b in 0..n {
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let hit = cfa.channel_at(y, x) as usize == c;
                    plane_index.push(hit.then_some((b * hw + y * w + x) as u32));
                }
            }
        }
    }
    let planes = tape.gather(v, plane_index.into(), &[n, 3, h, w])?;
    let v = tape.filter2d(planes, vars.get(ParamGroup::Demosaic), Padding::Reflect)?;

    // WB: per-channel gain.
    let wb_index: Arc<[Option<u32>]> = (0..n * 3 * hw).map(|i| Some(((i / hw) % 3) as u32)).collect();
    let gains = tape.gather(vars.get(ParamGroup::WhiteBalance), wb_index, &[n, 3, h, w])?;
    let v = tape.mul(v, gains)?;

    // CC, then SH and DN in YUV space.
    let v = tape.channel_affine(v, vars.get(ParamGroup::ColorCorrection))?;
    let to_yuv = constant_matrix(tape, &M_RGB_2_YUV);
    let v = tape.channel_affine(v, to_yuv)?;
    let v = tape.filter2d(v, vars.get(ParamGroup::Sharpen), Padding::Reflect)?;
    let v = tape.filter2d(v, vars.get(ParamGroup::Denoise), Padding::Reflect)?;
    let to_rgb = constant_matrix(tape, &M_YUV_2_RGB);
    let pre_clip = tape.channel_affine(v, to_rgb)?;

    // GC: clip, then v^(1/γ).
    let v = tape.clip01(pre_clip);
    let inv_gamma = tape.recip(vars.get(ParamGroup::Gamma));
    let mut v = tape.pow(v, inv_gamma)?;

    if output_standardize {
        v = tape.standardize_channels(v, T::lit(STANDARDIZE_EPS))?;
    }
    Ok(ForwardTrace { output: v, pre_clip })
}

/// Process a batch with parameters recorded under `mask`; the raw batch is a constant leaf.
pub fn process_param_batch<T: Scalar>(
    tape: &mut Tape<T>,
    raws: &[&RawImage<T>],
    params: &PipelineParams<T>,
    mask: &ParamGroupMask,
) -> Result<(Var, ParamVars), IspError> {
    let vars = record_params(tape, params, mask)?;
    let (batch, cfa) = raw_batch(raws)?;
    let raw = tape.constant(batch);
    let out = forward(tape, raw, cfa, &vars, params.output_standardize)?;
    Ok((out, vars))
}

/// Single-image convenience wrapper without gradients.
pub fn process_param<T: Scalar>(raw: &RawImage<T>, params: &PipelineParams<T>) -> Result<RgbImage<T>, IspError> {
    let mut tape = Tape::new();
    let (out, _) = process_param_batch(&mut tape, &[raw], params, &ParamGroupMask::none())?;
    let stage = if params.output_standardize {
        Stage::Standardized
    } else {
        Stage::Gamma
    };
    Ok(RgbImage::from_tensor(tape.value(out), stage)?)
}
