//! The subcommands. Each returns the list of files it wrote, relative to the run directory.

use std::fs;
use std::path::{Path, PathBuf};

use rawdrift::drift_controls::{
    forensics_sweep, run_drift_optimization, run_synthesis, summary_table, write_forensics_reports,
    write_optimization_runs, write_synthesis_report, ForensicsConfig, OptimizationConfig,
};
use rawdrift::isp_param::{default_params, deserialize_params, pipeline_gradcheck, process_param};
use rawdrift::isp_static::{
    black_level, color_correct, demosaic_raw, denoise, enumerate_configs, gamma_correct, rgb_to_yuv, sharpen,
    white_balance, yuv_to_rgb, StaticConfig,
};
use rawdrift::raw_io::{
    atomic_write, fetch_dataset, load_raw, synth_dataset, write_rgb, DatasetManifest, RawImage, RgbImage,
};
use rawdrift::task_models::{
    fit, load_checkpoint, save_checkpoint, OptimizerState, Sample, Target, TaskError, TaskModel,
};
use rawdrift::Scalar;

use crate::config::{DataConfig, RunConfig};
use crate::error::CliError;
use crate::run::RunDir;

/// Environment variable naming the cache directory (downloads land in `<cache>/datasets`).
pub const CACHE_ENV: &str = "RAWDRIFT_CACHE";

/// Raw frames with stable names, in a deterministic order.
pub fn load_data<T: Scalar>(data: Option<&DataConfig>) -> Result<Vec<(String, RawImage<T>)>, CliError> {
    let data = data.ok_or_else(|| CliError::Config("missing [data] section".into()))?;
    match (&data.synthetic, &data.raw_dir) {
        (Some(spec), None) => Ok(synth_dataset(spec)?
            .into_iter()
            .enumerate()
            .map(|(i, r)| (format!("scene{i:04}"), r))
            .collect()),
        (None, Some(dir)) => {
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(CliError::Io(format!("no .pgm files in {}", dir.display())));
            }
            paths
                .iter()
                .map(|p| {
                    let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    Ok((stem, load_raw(p)?))
                })
                .collect()
        }
        _ => Err(CliError::Config(
            "[data] needs exactly one of `synthetic` or `raw_dir`".into(),
        )),
    }
}

fn raws_only<T: Clone>(items: Vec<(String, T)>) -> Vec<T> {
    items.into_iter().map(|(_, r)| r).collect()
}

fn parse_configs(names: &[String]) -> Result<Vec<StaticConfig>, CliError> {
    if names.iter().any(|n| n == "all") {
        return Ok(enumerate_configs());
    }
    names.iter().map(|n| Ok(StaticConfig::from_abbrev(n)?)).collect()
}

fn slug(config: &StaticConfig) -> String {
    config.abbrev().replace(',', "-")
}

/// The static pipeline's intermediate views, in stage order.
fn stage_views(raw: &RawImage<f64>, config: &StaticConfig) -> Result<Vec<(&'static str, RgbImage<f64>)>, CliError> {
    let algos = config.algorithms;
    let dm = demosaic_raw(&black_level(raw, &config.black_level), algos.demosaic);
    let wb = white_balance(&dm, &config.white_balance);
    let cc = color_correct(&wb, &config.color_matrix);
    let sh = sharpen(&rgb_to_yuv(&cc), algos.sharpen);
    let dn = yuv_to_rgb(&denoise(&sh, algos.denoise));
    let gc = gamma_correct(&dn, config.gamma)?;
    Ok(vec![
        ("1-demosaic", dm),
        ("2-white_balance", wb),
        ("3-color_correct", cc),
        ("4-sharpen", yuv_to_rgb(&sh)),
        ("5-denoise", dn),
        ("6-gamma", gc),
    ])
}

pub fn process(cfg: &RunConfig, run: &RunDir, force: bool) -> Result<Vec<String>, CliError> {
    let section = cfg.process.clone().unwrap_or_default();
    let configs = parse_configs(&section.configs)?;
    let params = section
        .params
        .as_ref()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            Ok::<_, CliError>(deserialize_params::<f64>(&text)?)
        })
        .transpose()?;
    let mut files = Vec::new();
    let (mut written, mut skipped) = (0, 0);
    let mut emit = |name: String, image: &dyn Fn() -> Result<RgbImage<f64>, CliError>| -> Result<(), CliError> {
        let path = run.path.join(&name);
        if path.exists() && !force {
            skipped += 1;
        } else {
            write_rgb(&image()?, &path)?;
            written += 1;
        }
        files.push(name);
        Ok(())
    };
    for (stem, raw) in load_data::<f64>(cfg.data.as_ref())? {
        for config in &configs {
            emit(format!("{stem}__{}.png", slug(config)), &|| {
                Ok(rawdrift::isp_static::process_static(&raw, config)?)
            })?;
            if section.dump_stages {
                for (stage, view) in stage_views(&raw, config)? {
                    emit(format!("{stem}__{}__{stage}.png", slug(config)), &|| Ok(view.clone()))?;
                }
            }
        }
        if let Some(p) = &params {
            emit(format!("{stem}__param.png"), &|| Ok(process_param(&raw, p)?))?;
        }
    }
    run.log(&format!("process: {written} images written, {skipped} already present"))?;
    Ok(files)
}

pub fn synth(cfg: &RunConfig, run: &RunDir) -> Result<Vec<String>, CliError> {
    let mut section = cfg.synthesis.clone().unwrap_or_default();
    section.seed = cfg.seed;
    let raws = raws_only(load_data::<f32>(cfg.data.as_ref())?);
    run.log(&format!(
        "synthesis: {} items, {} folds, {} steps per cell",
        raws.len(),
        section.folds,
        section.steps
    ))?;
    let report = run_synthesis(&raws, &section)?;
    let mut files = write_synthesis_report(&report, &run.path)?;
    let mut summary = format!(
        "metric: {}\ndiagonal mean: {}\noff-diagonal mean: {}\nworst pair: {} -> {} ({})\nranking:\n",
        report.metric.name(),
        report.diagonal_mean(),
        report.off_diagonal_mean(),
        report.labels[report.worst.train],
        report.labels[report.worst.test],
        report.worst.score
    );
    for (rank, &i) in report.ranking.iter().enumerate() {
        summary.push_str(&format!(
            "{:>3}. {:<8} {:.4} ± {:.4}\n",
            rank + 1,
            report.labels[i],
            report.row_mean[i],
            report.row_std[i]
        ));
    }
    atomic_write(&run.path.join("synthesis_summary.txt"), summary.as_bytes())?;
    files.push("synthesis_summary.txt".into());
    run.log(&format!(
        "synthesis: diagonal mean {:.4}, off-diagonal mean {:.4}",
        report.diagonal_mean(),
        report.off_diagonal_mean()
    ))?;
    Ok(files)
}

pub fn forensics(cfg: &RunConfig, run: &RunDir) -> Result<Vec<String>, CliError> {
    let section = cfg.forensics.clone().unwrap_or_default();
    let raws = raws_only(load_data::<f32>(cfg.data.as_ref())?);
    let held = section.opt_items + section.test_items;
    if section.opt_items == 0 || section.test_items == 0 || held >= raws.len() {
        return Err(CliError::Config(format!(
            "{} items cannot provide {} optimisation, {} test and at least one training item",
            raws.len(),
            section.opt_items,
            section.test_items
        )));
    }
    let split = raws.len() - held;
    let (train, rest) = raws.split_at(split);
    let (opt, test) = rest.split_at(section.opt_items);
    let base = default_params::<f32>();
    let mut files = Vec::new();

    let model: TaskModel<f32> = match &section.model.checkpoint {
        Some(path) => load_checkpoint(path)?,
        None => {
            let samples = train
                .iter()
                .map(|r| {
                    let label = r.label.as_ref().ok_or(TaskError::Label("unlabelled training item".into()))?;
                    Ok(Sample::new(&process_param(r, &base)?, Target::from_label(label)))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let arch = match samples[0].target {
                Target::Class(_) => rawdrift::task_models::Architecture::Classifier {
                    classes: samples
                        .iter()
                        .map(|s| match s.target {
                            Target::Class(c) => c + 1,
                            Target::Mask(_) => 0,
                        })
                        .max()
                        .unwrap_or(2)
                        .max(2),
                },
                Target::Mask(_) => rawdrift::task_models::Architecture::Segmenter,
            };
            let mut model = TaskModel::new(arch, cfg.seed);
            let mut opt_state = OptimizerState::new(section.model.optimizer, cfg.seed);
            let losses = fit(&mut model, &mut opt_state, &samples, section.model.steps, section.model.batch_size)?;
            run.log(&format!(
                "forensics: trained task model on {} items, final loss {}",
                samples.len(),
                losses.last().copied().unwrap_or(f64::NAN)
            ))?;
            save_checkpoint(&model, &run.path.join("model.toml"))?;
            files.push("model.toml".into());
            model
        }
    };

    let template = ForensicsConfig {
        lambda: 0.0,
        steps: section.steps,
        optimizer: section.optimizer,
        mask: Default::default(),
        seed: cfg.seed,
    };
    let reports = forensics_sweep(&model, &base, opt, test, &section.lambdas, &section.masks, &template)?;
    files.extend(write_forensics_reports(&reports, &run.path)?);
    for r in &reports {
        run.log(&format!(
            "forensics: lambda {} groups {}: score {} -> {}, l2 {}{}",
            r.lambda,
            r.mask.label(),
            r.score_baseline,
            r.score,
            r.l2,
            if r.aborted { " (aborted)" } else { "" }
        ))?;
    }
    if reports.iter().any(|r| r.aborted) {
        return Err(CliError::Numeric("a forensic search hit a non-finite objective".into()));
    }
    Ok(files)
}

pub fn optimize(cfg: &RunConfig, run: &RunDir) -> Result<Vec<String>, CliError> {
    let section = cfg.optimize.clone().unwrap_or_default();
    let raws = raws_only(load_data::<f32>(cfg.data.as_ref())?);
    let mut runs = Vec::new();
    for &intensity in &section.intensities {
        for &mode in &section.modes {
            let config = OptimizationConfig {
                mode,
                steps: section.steps,
                folds: section.folds,
                batch_size: section.batch_size,
                eval_every: section.eval_every,
                model_optimizer: section.model_optimizer,
                pipeline_optimizer: section.pipeline_optimizer,
                mask: section.mask,
                intensity,
                seed: cfg.seed,
            };
            let r = run_drift_optimization(&raws, &config)?;
            run.log(&format!(
                "optimize: {} at intensity {}: {} {:.4} ± {:.4}",
                mode, intensity, r.metric.name(), r.mean, r.std
            ))?;
            runs.push(r);
        }
    }
    let mut files = write_optimization_runs(&runs, &run.path)?;
    atomic_write(&run.path.join("optimize_summary.txt"), summary_table(&runs).as_bytes())?;
    files.push("optimize_summary.txt".into());
    Ok(files)
}

pub fn gradcheck(cfg: &RunConfig, run: &RunDir) -> Result<Vec<String>, CliError> {
    let section = cfg.gradcheck.clone().unwrap_or_default();
    let report = pipeline_gradcheck(&section.to_config(cfg.seed))?;
    let mut csv = String::from("target,max_relative_error,checked,skipped,status\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.target,
            row.max_relative_error,
            row.checked,
            row.skipped,
            if row.passed { "PASS" } else { "FAIL" }
        ));
    }
    atomic_write(&run.path.join("gradcheck.csv"), csv.as_bytes())?;
    let table = report.table();
    println!("{table}");
    for line in table.lines() {
        rawdrift::raw_io::append_line(&run.path.join(crate::run::RUN_LOG), line)?;
    }
    if !report.passed() {
        let failing: Vec<String> = report.rows.iter().filter(|r| !r.passed).map(|r| r.target.to_string()).collect();
        return Err(CliError::Gradcheck(format!(
            "{} exceed tolerance {}",
            failing.join(", "),
            report.tolerance
        )));
    }
    Ok(vec!["gradcheck.csv".into()])
}

/// Default download root: `$RAWDRIFT_CACHE/datasets`, else `~/.cache/rawdrift/datasets`.
pub fn cache_dir() -> PathBuf {
    let root = std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| Path::new(&h).join(".cache").join("rawdrift")))
        .unwrap_or_else(|| PathBuf::from(".rawdrift-cache"));
    root.join("datasets")
}

pub fn fetch(cfg: &RunConfig, run: &RunDir) -> Result<Vec<String>, CliError> {
    let section = cfg
        .fetch
        .clone()
        .ok_or_else(|| CliError::Config("fetch needs a manifest ([fetch] manifest or --manifest)".into()))?;
    let destination = section.destination.clone().unwrap_or_else(cache_dir);
    let manifest = DatasetManifest::load(&section.manifest)?;
    let report = fetch_dataset(&manifest, &destination)?;
    atomic_write(&run.path.join("fetch_report.csv"), report.to_csv().as_bytes())?;
    run.log(&format!(
        "fetch: {} downloaded, {} already present, {} rejected, {} failed",
        report.downloaded.len(),
        report.verified_existing.len(),
        report.rejected.len(),
        report.failed.len()
    ))?;
    if let Some(f) = report.rejected.first() {
        return Err(CliError::Checksum(format!("{}: {}", f.path, f.reason)));
    }
    if let Some(f) = report.failed.first() {
        return Err(CliError::Io(format!("{}: {} ({})", f.path, f.reason, f.hint)));
    }
    Ok(vec!["fetch_report.csv".into()])
}
