//! Drift synthesis: train on one processing variant, test on all twelve.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift_controls::corruptions::{apply_corruption, CorruptionKind, BASELINE_SEVERITY};
use crate::drift_controls::diff::{diff_images, ImageDiff};
use crate::drift_controls::{apply_channel_stats, channel_stats, fold_split, format_f64, mean_std, task_setup, write_csv, DriftError};
use crate::isp_static::{enumerate_configs, process_static, StaticConfig};
use crate::raw_io::{derive_seed, write_rgb, RawImage, RgbImage};
use crate::scalar::Scalar;
use crate::task_models::{evaluate, fit, Metric, OptimizerConfig, OptimizerState, Sample, TaskModel, Target};

/// Seed stream offsets keeping model, corruption and fold randomness apart.
const CORRUPTION_STREAM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Severity of the corruption baseline; `None` skips it.
    #[serde(default = "default_severity")]
    pub corruption_severity: Option<u8>,
    /// Standardise network inputs per channel with the statistics of each
    /// cell's training views (applied unchanged to every test variant).
    #[serde(default = "default_true")]
    pub standardize_inputs: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}
fn default_folds() -> usize {
    3
}
fn default_steps() -> usize {
    500
}
fn default_batch_size() -> usize {
    16
}
fn default_severity() -> Option<u8> {
    Some(BASELINE_SEVERITY)
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            folds: default_folds(),
            steps: default_steps(),
            batch_size: default_batch_size(),
            optimizer: OptimizerConfig::default(),
            corruption_severity: default_severity(),
            standardize_inputs: true,
            seed: 0,
        }
    }
}

/// Score of one train configuration on corrupted views of its own test items.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionScore {
    pub train: usize,
    pub kind: CorruptionKind,
    pub severity: u8,
    pub mean: f64,
    pub std: f64,
}

/// The lowest-scoring off-diagonal cell with one test item seen through both configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct WorstPair<T> {
    pub train: usize,
    pub test: usize,
    pub score: f64,
    pub item: usize,
    pub view_train: RgbImage<T>,
    pub view_test: RgbImage<T>,
    pub diff: ImageDiff<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisReport<T> {
    /// Configuration abbreviations; rows index the training view, columns the test view.
    pub labels: Vec<String>,
    pub metric: Metric,
    pub folds: usize,
    pub seed: u64,
    /// `[fold][train][test]`.
    pub fold_scores: Vec<Vec<Vec<f64>>>,
    pub matrix: Vec<Vec<f64>>,
    pub matrix_std: Vec<Vec<f64>>,
    /// Per training configuration: average over test views, then mean/std over folds.
    pub row_mean: Vec<f64>,
    pub row_std: Vec<f64>,
    /// Training configurations ordered by descending `row_mean` (ties by index).
    pub ranking: Vec<usize>,
    pub worst: WorstPair<T>,
    pub corruption: Vec<CorruptionScore>,
}

impl<T> SynthesisReport<T> {
    pub fn diagonal_mean(&self) -> f64 {
        let n = self.matrix.len();
        (0..n).map(|i| self.matrix[i][i]).sum::<f64>() / n as f64
    }

    pub fn off_diagonal_mean(&self) -> f64 {
        let n = self.matrix.len();
        let total: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.matrix[i][j])
            .sum();
        total / (n * (n - 1)) as f64
    }
}

/// Process every raw frame through every configuration: `[config][item]`.
pub fn synthesize_views<T: Scalar>(
    raws: &[RawImage<T>],
    configs: &[StaticConfig],
) -> Result<Vec<Vec<RgbImage<T>>>, DriftError> {
    configs
        .par_iter()
        .map(|c| {
            raws.iter()
                .map(|r| process_static(r, c).map_err(DriftError::from))
                .collect()
        })
        .collect()
}

/// Train a model per (fold, training configuration) and evaluate it on all
/// twelve processing variants of the held-out items.
pub fn run_synthesis<T: Scalar>(raws: &[RawImage<T>], config: &SynthesisConfig) -> Result<SynthesisReport<T>, DriftError> {
    let configs = enumerate_configs();
    let (arch, metric, targets) = task_setup(raws)?;
    let folds = fold_split(raws.len(), config.folds)?;
    let views = synthesize_views(raws, &configs)?;
    let samples: Vec<Vec<Sample<T>>> = views
        .iter()
        .map(|vs| vs.iter().zip(&targets).map(|(v, t)| Sample::new(v, t.clone())).collect())
        .collect();
    let pick = |set: &[Sample<T>], idx: &[usize]| -> Vec<Sample<T>> { idx.iter().map(|&i| set[i].clone()).collect() };
    let n_cfg = configs.len();

    // (fold, train) jobs are independent; results come back in job order.
    let jobs: Vec<(usize, usize)> = (0..folds.len()).flat_map(|f| (0..n_cfg).map(move |c| (f, c))).collect();
    let results: Vec<(Vec<f64>, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(f, c)| {
            let (train_idx, test_idx) = &folds[f];
            let fold_seed = derive_seed(config.seed, f as u64);
            let mut model = TaskModel::new(arch, fold_seed);
            let mut opt = OptimizerState::new(config.optimizer, fold_seed);
            let train = pick(&samples[c], train_idx);
            let stats = config.standardize_inputs.then(|| channel_stats(&train));
            let prep = |set: Vec<Sample<T>>| match &stats {
                Some(st) => apply_channel_stats(&set, st),
                None => set,
            };
            fit(&mut model, &mut opt, &prep(train.clone()), config.steps, config.batch_size)?;
            let row = (0..n_cfg)
                .map(|t| evaluate(&model, &prep(pick(&samples[t], test_idx)), metric, config.batch_size))
                .collect::<Result<Vec<_>, _>>()?;
            let mut corrupted = Vec::new();
            if let Some(severity) = config.corruption_severity {
                for kind in CorruptionKind::ALL {
                    let set = test_idx
                        .iter()
                        .map(|&i| {
                            let seed = derive_seed(config.seed, CORRUPTION_STREAM + i as u64);
                            let v = apply_corruption(&views[c][i], kind, severity, seed)?;
                            Ok(Sample::new(&v, targets[i].clone()))
                        })
                        .collect::<Result<Vec<_>, DriftError>>()?;
                    corrupted.push(evaluate(&model, &prep(set), metric, config.batch_size)?);
                }
            }
            Ok((row, corrupted))
        })
        .collect::<Result<_, DriftError>>()?;

    let mut fold_scores = vec![vec![Vec::new(); n_cfg]; folds.len()];
    let mut corruption_folds = vec![Vec::new(); n_cfg];
    for (&(f, c), (row, corrupted)) in jobs.iter().zip(results) {
        fold_scores[f][c] = row;
        corruption_folds[c].push(corrupted);
    }
    let cell = |i: usize, j: usize| mean_std(fold_scores.iter().map(|fs| fs[i][j]));
    let matrix: Vec<Vec<f64>> = (0..n_cfg).map(|i| (0..n_cfg).map(|j| cell(i, j).0).collect()).collect();
    let matrix_std: Vec<Vec<f64>> = (0..n_cfg).map(|i| (0..n_cfg).map(|j| cell(i, j).1).collect()).collect();
    let rows: Vec<(f64, f64)> = (0..n_cfg)
        .map(|i| mean_std(fold_scores.iter().map(|fs| fs[i].iter().sum::<f64>() / n_cfg as f64)))
        .collect();
    let mut ranking: Vec<usize> = (0..n_cfg).collect();
    ranking.sort_by(|&a, &b| rows[b].0.total_cmp(&rows[a].0).then(a.cmp(&b)));

    let corruption = match config.corruption_severity {
        Some(severity) => (0..n_cfg)
            .flat_map(|c| {
                let per_fold = &corruption_folds[c];
                CorruptionKind::ALL.into_iter().enumerate().map(move |(k, kind)| {
                    let (mean, std) = mean_std(per_fold.iter().map(|s| s[k]));
                    CorruptionScore {
                        train: c,
                        kind,
                        severity,
                        mean,
                        std,
                    }
                })
            })
            .collect(),
        None => Vec::new(),
    };

    let (mut wi, mut wj) = (0, 1);
    for i in 0..n_cfg {
        for j in 0..n_cfg {
            if i != j && matrix[i][j] < matrix[wi][wj] {
                (wi, wj) = (i, j);
            }
        }
    }
    let item = folds[0].1[0];
    let worst = WorstPair {
        train: wi,
        test: wj,
        score: matrix[wi][wj],
        item,
        view_train: views[wi][item].clone(),
        view_test: views[wj][item].clone(),
        diff: diff_images(&views[wi][item], &views[wj][item])?,
    };

    Ok(SynthesisReport {
        labels: configs.iter().map(StaticConfig::abbrev).collect(),
        metric,
        folds: folds.len(),
        seed: config.seed,
        fold_scores,
        matrix,
        matrix_std,
        row_mean: rows.iter().map(|r| r.0).collect(),
        row_std: rows.iter().map(|r| r.1).collect(),
        ranking,
        worst,
        corruption,
    })
}

/// File-name form of a configuration abbreviation (`bi,s,me` → `bi-s-me`).
pub fn config_slug(abbrev: &str) -> String {
    abbrev.replace(',', "-")
}

/// Write the report as CSV tables and 16-bit PNGs:
///
/// - `synthesis_matrix.csv` — `train,test,mean,std`, one row per cell
/// - `synthesis_folds.csv` — `fold,train,test,score`
/// - `synthesis_rankings.csv` — `rank,config,mean,std`
/// - `synthesis_corruption.csv` — `train,corruption,severity,mean,std`
/// - `worst_<train>_vs_<test>_{a,b,diff}.png` — the worst pair's views and `|A−B|`
pub fn write_synthesis_report<T: Scalar>(report: &SynthesisReport<T>, dir: &Path) -> Result<Vec<String>, DriftError> {
    let labels = &report.labels;
    let n = labels.len();
    let mut files = Vec::new();

    let mut rows = Vec::new();
    for i in 0..n {
        for j in 0..n {
            rows.push(vec![
                labels[i].clone(),
                labels[j].clone(),
                format_f64(report.matrix[i][j]),
                format_f64(report.matrix_std[i][j]),
            ]);
        }
    }
    files.push(write_csv(dir, "synthesis_matrix.csv", &["train", "test", "mean", "std"], &rows)?);

    let mut rows = Vec::new();
    for (f, fs) in report.fold_scores.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                rows.push(vec![f.to_string(), labels[i].clone(), labels[j].clone(), format_f64(fs[i][j])]);
            }
        }
    }
    files.push(write_csv(dir, "synthesis_folds.csv", &["fold", "train", "test", "score"], &rows)?);

    let rows: Vec<Vec<String>> = report
        .ranking
        .iter()
        .enumerate()
        .map(|(r, &i)| {
            vec![
                (r + 1).to_string(),
                labels[i].clone(),
                format_f64(report.row_mean[i]),
                format_f64(report.row_std[i]),
            ]
        })
        .collect();
    files.push(write_csv(dir, "synthesis_rankings.csv", &["rank", "config", "mean", "std"], &rows)?);

    let rows: Vec<Vec<String>> = report
        .corruption
        .iter()
        .map(|c| {
            vec![
                labels[c.train].clone(),
                c.kind.name().to_owned(),
                c.severity.to_string(),
                format_f64(c.mean),
                format_f64(c.std),
            ]
        })
        .collect();
    files.push(write_csv(
        dir,
        "synthesis_corruption.csv",
        &["train", "corruption", "severity", "mean", "std"],
        &rows,
    )?);

    let w = &report.worst;
    let stem = format!("worst_{}_vs_{}", config_slug(&labels[w.train]), config_slug(&labels[w.test]));
    for (suffix, image) in [("a", &w.view_train), ("b", &w.view_test), ("diff", &w.diff.diff)] {
        let name = format!("{stem}_{suffix}.png");
        write_rgb(image, &dir.join(&name))?;
        files.push(name);
    }
    Ok(files)
}

/// Targets in dataset order (re-exported for callers building their own splits).
pub fn dataset_targets<T: Scalar>(raws: &[RawImage<T>]) -> Result<Vec<Target>, DriftError> {
    Ok(task_setup(raws)?.2)
}
