//! Finite-difference verification of the parametrized pipeline's gradients.
//!
//! For each seeded random raw the scalar loss `sum(w ⊙ v ⊙ v)` (with fixed
//! random weights `w` in [-1, 1]) is differentiated on the tape and compared
//! with central differences coordinate by coordinate. The loss is quadratic in
//! the view because `v^(1/γ)` has unbounded curvature at 0: a loss linear in
//! `v` makes dark pixels dominate the truncation error of the difference
//! quotient, while `v^(2/γ)` keeps it well conditioned.
//!
//! A coordinate is skipped when its stencil reaches a kink of the final clip:
//! some pre-clip value changes clip region between the stencil points, lies
//! within [`BOUNDARY_MARGIN`] of 0 or 1, or lies in `(0, STENCIL_REACH · |Δv|]`
//! where `|Δv|` is how far the stencil moves that value. The last condition
//! covers the singular point of the gamma curve at 0: just above it the
//! difference quotient's truncation error is governed by `(|Δv| / v)²`, so a
//! value must sit many stencil widths away before the oracle is trustworthy.
//! Near 1 the curve is smooth and no such widening is needed.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::isp_param::forward::{forward_traced, record_params};
use crate::isp_param::params::{default_params, ParamGroup, ParamGroupMask, PipelineParams};
use crate::isp_static::IspError;
use crate::raw_io::CfaLayout;
use crate::tensorcore::{relative_error, Tape, Tensor, Var};

/// Distance to 0 or 1 below which a pre-clip value counts as on the boundary.
pub const BOUNDARY_MARGIN: f64 = 1e-6;
/// Multiple of a value's stencil displacement that must separate it from 0.
pub const STENCIL_REACH: f64 = 100.0;
/// Denominator floor of the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Settings of a pipeline gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    /// One random raw per seed.
    pub seeds: Vec<u64>,
    /// Raw height and width.
    pub size: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Also check the gradient with respect to the raw input.
    pub check_raw: bool,
    /// Negative control: perturb the analytic white-balance gradient by 1 %.
    pub corrupt_adjoint: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seeds: (0..20).collect(),
            size: 16,
            step: 1e-5,
            tolerance: 1e-4,
            check_raw: true,
            corrupt_adjoint: false,
        }
    }
}

/// What a row of the report refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckTarget {
    Group(ParamGroup),
    RawInput,
}

impl fmt::Display for CheckTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Group(g) => write!(f, "theta{} {}", g.index() + 1, g.tag()),
            Self::RawInput => f.write_str("raw input"),
        }
    }
}

/// Worst relative error for one parameter group (or the raw input).
#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub target: CheckTarget,
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub rows: Vec<GroupCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    /// Fixed-width text table, one line per row.
    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:>14} {:>8} {:>8}  status\n", "target", "max_rel_err", "checked", "skipped");
        for r in &self.rows {
            s.push_str(&format!(
                "{:<12} {:>14.3e} {:>8} {:>8}  {}\n",
                r.target.to_string(),
                r.max_relative_error,
                r.checked,
                r.skipped,
                if r.passed { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Clip region of a pre-clip value: below, inside or above.
fn region(v: f64) -> i8 {
    if v < 0.0 {
        -1
    } else if v > 1.0 {
        1
    } else {
        0
    }
}

struct Instance {
    raw: Tensor<f64>,
    cfa: CfaLayout,
    weights: Tensor<f64>,
}

struct Evaluation {
    loss: f64,
    pre_clip: Vec<f64>,
}

fn evaluate(inst: &Instance, params: &PipelineParams<f64>, raw: &Tensor<f64>) -> Result<Evaluation, IspError> {
    let mut tape = Tape::new();
    let vars = record_params(&mut tape, params, &ParamGroupMask::none())?;
    let raw = tape.constant(raw.clone());
    let trace = forward_traced(&mut tape, raw, inst.cfa, &vars, params.output_standardize)?;
    let loss = loss_on(&mut tape, trace.output, &inst.weights)?;
    Ok(Evaluation {
        loss: tape.value(loss).item()?,
        pre_clip: tape.value(trace.pre_clip).data().to_vec(),
    })
}

fn loss_on(tape: &mut Tape<f64>, v: Var, weights: &Tensor<f64>) -> Result<Var, IspError> {
    let w = tape.constant(weights.clone());
    let sq = tape.mul(v, v)?;
    let weighted = tape.mul(w, sq)?;
    Ok(tape.sum(weighted))
}

/// Accumulates one row of the report.
struct Accumulator {
    max: f64,
    checked: usize,
    skipped: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            max: 0.0,
            checked: 0,
            skipped: 0,
        }
    }

    /// Compare one coordinate, or skip it when the stencil touches a clip kink.
    fn probe(&mut self, analytic: f64, up: &Evaluation, down: &Evaluation, base: &[f64], step: f64) {
        let kink = base.iter().zip(&up.pre_clip).zip(&down.pre_clip).any(|((&b, &u), &d)| {
            let reach = (u - b).abs().max((d - b).abs());
            let on_boundary = b.abs() <= BOUNDARY_MARGIN || (b - 1.0).abs() <= BOUNDARY_MARGIN;
            let near_singularity = b > 0.0 && b <= STENCIL_REACH * reach;
            on_boundary || near_singularity || region(u) != region(b) || region(d) != region(b)
        });
        if kink {
            self.skipped += 1;
            return;
        }
        let numeric = (up.loss - down.loss) / (2.0 * step);
        self.max = self.max.max(relative_error(analytic, numeric, RELATIVE_FLOOR));
        self.checked += 1;
    }
}

/// Check gradients of the default parameters on seeded random raws.
pub fn pipeline_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport, IspError> {
    pipeline_gradcheck_with(config, &default_params())
}

/// Check gradients at the given parameters on seeded random raws.
pub fn pipeline_gradcheck_with(
    config: &GradcheckConfig,
    params: &PipelineParams<f64>,
) -> Result<GradcheckReport, IspError> {
    params.validate()?;
    let n = config.size;
    let mut groups: Vec<Accumulator> = ParamGroup::ALL.iter().map(|_| Accumulator::new()).collect();
    let mut raw_acc = Accumulator::new();

    for &seed in &config.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Tensor::from_fn(&[1, n, n], |_| rng.gen::<f64>());
        let weights = Tensor::from_fn(&[1, 3, n, n], |_| rng.gen_range(-1.0..1.0));
        let inst = Instance {
            raw,
            cfa: CfaLayout::default(),
            weights,
        };

        // Analytic gradients.
        let mut tape = Tape::new();
        let vars = record_params(&mut tape, params, &ParamGroupMask::all())?;
        let raw_var = tape.leaf(inst.raw.clone(), config.check_raw);
        let trace = forward_traced(&mut tape, raw_var, inst.cfa, &vars, params.output_standardize)?;
        let loss = loss_on(&mut tape, trace.output, &inst.weights)?;
        let base_pre = tape.value(trace.pre_clip).data().to_vec();
        let grads = tape.backward(loss)?;
        let zero = |shape: &[usize]| Tensor::zeros(shape);

        for g in ParamGroup::ALL {
            let mut analytic = grads.get(vars.get(g)).cloned().unwrap_or_else(|| zero(g.shape()));
            if config.corrupt_adjoint && g == ParamGroup::WhiteBalance {
                analytic = analytic.map(|v| v * 1.01);
            }
            let acc = &mut groups[g.index()];
            let mut probe = params.clone();
            for i in 0..analytic.len() {
                let x0 = params.group(g).data()[i];
                probe.group_mut(g).data_mut()[i] = x0 + config.step;
                let up = evaluate(&inst, &probe, &inst.raw)?;
                probe.group_mut(g).data_mut()[i] = x0 - config.step;
                let down = evaluate(&inst, &probe, &inst.raw)?;
                probe.group_mut(g).data_mut()[i] = x0;
                acc.probe(analytic.data()[i], &up, &down, &base_pre, config.step);
            }
        }

        if config.check_raw {
            let analytic = grads.get(raw_var).cloned().unwrap_or_else(|| zero(inst.raw.shape()));
            let mut probe = inst.raw.clone();
            for i in 0..probe.len() {
                let x0 = inst.raw.data()[i];
                probe.data_mut()[i] = x0 + config.step;
                let up = evaluate(&inst, params, &probe)?;
                probe.data_mut()[i] = x0 - config.step;
                let down = evaluate(&inst, params, &probe)?;
                probe.data_mut()[i] = x0;
                raw_acc.probe(analytic.data()[i], &up, &down, &base_pre, config.step);
            }
        }
    }

    let row = |target, acc: &Accumulator| GroupCheck {
        target,
        max_relative_error: acc.max,
        checked: acc.checked,
        skipped: acc.skipped,
        passed: acc.checked > 0 && acc.max <= config.tolerance,
    };
    let mut rows: Vec<GroupCheck> = ParamGroup::ALL
        .iter()
        .map(|&g| row(CheckTarget::Group(g), &groups[g.index()]))
        .collect();
    if config.check_raw {
        rows.push(row(CheckTarget::RawInput, &raw_acc));
    }
    Ok(GradcheckReport {
        rows,
        tolerance: config.tolerance,
    })
}
