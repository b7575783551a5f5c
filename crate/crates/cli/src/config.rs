//! Run configuration files. Every section rejects unknown keys.

use std::path::{Path, PathBuf};

use rawdrift::drift_controls::{OptimizationMode, SynthesisConfig, DEFAULT_LAMBDA_GRID};
use rawdrift::isp_param::{GradcheckConfig, ParamGroupMask};
use rawdrift::raw_io::DatasetSpec;
use rawdrift::task_models::OptimizerConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into every control section.
    #[serde(default)]
    pub seed: u64,
    /// Output directory (overridden by `--out`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forensics: Option<ForensicsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize: Option<OptimizeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradcheckSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fetch: Option<FetchSection>,
}

/// Where raw frames come from: generated scenes or a directory of PGM files
/// with sidecars. Exactly one must be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<DatasetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSection {
    /// Static configuration abbreviations, or `["all"]` for the twelve combinations.
    #[serde(default = "all_configs")]
    pub configs: Vec<String>,
    /// Optional parameter document processed with the parametrized pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    /// Also write every intermediate stage of the static pipeline.
    #[serde(default)]
    pub dump_stages: bool,
}

fn all_configs() -> Vec<String> {
    vec!["all".into()]
}

impl Default for ProcessSection {
    fn default() -> Self {
        Self {
            configs: all_configs(),
            params: None,
            dump_stages: false,
        }
    }
}

/// How the frozen task model under attack is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Load this checkpoint instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "model_steps")]
    pub steps: usize,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    #[serde(default = "model_optimizer")]
    pub optimizer: OptimizerConfig,
}

fn model_steps() -> usize {
    200
}
fn batch_size() -> usize {
    16
}
fn model_optimizer() -> OptimizerConfig {
    OptimizerConfig::adam(1e-2)
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            steps: model_steps(),
            batch_size: batch_size(),
            optimizer: model_optimizer(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForensicsSection {
    #[serde(default = "lambda_grid")]
    pub lambdas: Vec<f64>,
    /// Parameter-group masks searched independently (`all`, `wb`, `bl+gc`, …).
    #[serde(default = "all_masks")]
    pub masks: Vec<ParamGroupMask>,
    #[serde(default = "forensic_steps")]
    pub steps: usize,
    #[serde(default = "forensic_optimizer")]
    pub optimizer: OptimizerConfig,
    /// Items (from the end of the dataset) forming the optimisation batch.
    #[serde(default = "batch_items")]
    pub opt_items: usize,
    /// Items following the optimisation batch, held out for reporting.
    #[serde(default = "batch_items")]
    pub test_items: usize,
    #[serde(default)]
    pub model: ModelSection,
}

fn lambda_grid() -> Vec<f64> {
    DEFAULT_LAMBDA_GRID.to_vec()
}
fn all_masks() -> Vec<ParamGroupMask> {
    vec![ParamGroupMask::all()]
}
fn forensic_steps() -> usize {
    20
}
fn forensic_optimizer() -> OptimizerConfig {
    OptimizerConfig::adam(1e-2)
}
fn batch_items() -> usize {
    16
}

impl Default for ForensicsSection {
    fn default() -> Self {
        Self {
            lambdas: lambda_grid(),
            masks: all_masks(),
            steps: forensic_steps(),
            optimizer: forensic_optimizer(),
            opt_items: batch_items(),
            test_items: batch_items(),
            model: ModelSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    #[serde(default = "all_modes")]
    pub modes: Vec<OptimizationMode>,
    #[serde(default = "intensities")]
    pub intensities: Vec<f64>,
    #[serde(default = "optimize_steps")]
    pub steps: usize,
    #[serde(default = "folds")]
    pub folds: usize,
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    #[serde(default = "eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub model_optimizer: OptimizerConfig,
    #[serde(default)]
    pub pipeline_optimizer: OptimizerConfig,
    #[serde(default = "ParamGroupMask::all")]
    pub mask: ParamGroupMask,
}

fn all_modes() -> Vec<OptimizationMode> {
    OptimizationMode::ALL.to_vec()
}
fn intensities() -> Vec<f64> {
    vec![0.1, 1.0]
}
fn optimize_steps() -> usize {
    500
}
fn folds() -> usize {
    3
}
fn eval_every() -> usize {
    1
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self {
            modes: all_modes(),
            intensities: intensities(),
            steps: optimize_steps(),
            folds: folds(),
            batch_size: batch_size(),
            eval_every: eval_every(),
            model_optimizer: OptimizerConfig::default(),
            pipeline_optimizer: OptimizerConfig::default(),
            mask: ParamGroupMask::all(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    /// Random raws are drawn from these seeds; when absent, `count` seeds
    /// starting at the run seed are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "gradcheck_count")]
    pub count: u64,
    #[serde(default = "gradcheck_size")]
    pub size: usize,
    #[serde(default = "gradcheck_step")]
    pub step: f64,
    #[serde(default = "gradcheck_tolerance")]
    pub tolerance: f64,
    #[serde(default = "yes")]
    pub check_raw: bool,
    /// Negative control: perturb one analytic gradient so the check must fail.
    #[serde(default)]
    pub corrupt_adjoint: bool,
}

fn gradcheck_count() -> u64 {
    20
}
fn gradcheck_size() -> usize {
    GradcheckConfig::default().size
}
fn gradcheck_step() -> f64 {
    GradcheckConfig::default().step
}
fn gradcheck_tolerance() -> f64 {
    GradcheckConfig::default().tolerance
}
fn yes() -> bool {
    true
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            seeds: None,
            count: gradcheck_count(),
            size: gradcheck_size(),
            step: gradcheck_step(),
            tolerance: gradcheck_tolerance(),
            check_raw: true,
            corrupt_adjoint: false,
        }
    }
}

impl GradcheckSection {
    pub fn to_config(&self, seed: u64) -> GradcheckConfig {
        GradcheckConfig {
            seeds: self.seeds.clone().unwrap_or_else(|| (seed..seed + self.count).collect()),
            size: self.size,
            step: self.step,
            tolerance: self.tolerance,
            check_raw: self.check_raw,
            corrupt_adjoint: self.corrupt_adjoint,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FetchSection {
    pub manifest: PathBuf,
    /// Download root; defaults to `$RAWDRIFT_CACHE/datasets`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// Make relative paths in the file relative to the file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.out.as_mut() {
            fix(p);
        }
        if let Some(p) = self.data.as_mut().and_then(|d| d.raw_dir.as_mut()) {
            fix(p);
        }
        if let Some(p) = self.process.as_mut().and_then(|s| s.params.as_mut()) {
            fix(p);
        }
        if let Some(p) = self.forensics.as_mut().and_then(|s| s.model.checkpoint.as_mut()) {
            fix(p);
        }
        if let Some(f) = self.fetch.as_mut() {
            fix(&mut f.manifest);
            if let Some(d) = f.destination.as_mut() {
                fix(d);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}
