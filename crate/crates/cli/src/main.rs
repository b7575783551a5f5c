//! `rawdrift` — process raw frames, synthesise processing drift, search for
//! harmful pipeline settings, and train pipelines jointly with task models.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{FetchSection, RunConfig};
use crate::error::CliError;
use crate::run::{Prepared, RunDir};

#[derive(Parser, Debug)]
#[command(name = "rawdrift", version, about)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace outputs of a previous run instead of skipping.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for parallel sections (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Process raw frames through static configurations (and optionally a parameter document).
    Process,
    /// Train on each processing variant and test on all twelve.
    Synth,
    /// Adversarial search over pipeline parameters against a frozen task model.
    Forensics,
    /// Train task models on learned, frozen and direct-raw inputs.
    Optimize,
    /// Compare pipeline gradients with central finite differences.
    Gradcheck,
    /// Download and verify the files of a dataset manifest.
    Fetch {
        /// Manifest CSV (overrides `[fetch] manifest`).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Download root (overrides `[fetch] destination`).
        #[arg(long)]
        destination: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Process => "process",
            Self::Synth => "synth",
            Self::Forensics => "forensics",
            Self::Optimize => "optimize",
            Self::Gradcheck => "gradcheck",
            Self::Fetch { .. } => "fetch",
        }
    }
}

/// Apply command-line overrides and fill in the command's defaults, so the
/// resolved file records every effective setting.
fn resolve(cli: &Cli) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Process => {
            cfg.process.get_or_insert_with(Default::default);
        }
        Command::Synth => {
            cfg.synthesis.get_or_insert_with(Default::default).seed = cfg.seed;
        }
        Command::Forensics => {
            cfg.forensics.get_or_insert_with(Default::default);
        }
        Command::Optimize => {
            cfg.optimize.get_or_insert_with(Default::default);
        }
        Command::Gradcheck => {
            cfg.gradcheck.get_or_insert_with(Default::default);
        }
        Command::Fetch { manifest, destination } => {
            if let Some(m) = manifest {
                let dest = cfg.fetch.as_ref().and_then(|f| f.destination.clone());
                cfg.fetch = Some(FetchSection {
                    manifest: m.clone(),
                    destination: dest,
                });
            }
            if let (Some(d), Some(f)) = (destination, cfg.fetch.as_mut()) {
                f.destination = Some(d.clone());
            }
        }
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.take())
        .unwrap_or_else(|| PathBuf::from("rawdrift-out").join(cli.command.name()));
    // The output location is not part of the run's identity.
    cfg.out = None;
    Ok((cfg, out))
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let (cfg, out) = resolve(cli)?;
    let resolved = cfg.to_toml()?;
    let run = match RunDir::prepare(&out, cli.command.name(), &resolved, cli.force)? {
        Prepared::Complete(run) => {
            eprintln!("{}: complete run found in {}, nothing to do (use --force to rerun)", cli.command.name(), run.path.display());
            return Ok(());
        }
        Prepared::Fresh(run) => run,
    };
    let files = match &cli.command {
        Command::Process => commands::process(&cfg, &run, cli.force)?,
        Command::Synth => commands::synth(&cfg, &run)?,
        Command::Forensics => commands::forensics(&cfg, &run)?,
        Command::Optimize => commands::optimize(&cfg, &run)?,
        Command::Gradcheck => commands::gradcheck(&cfg, &run)?,
        Command::Fetch { .. } => commands::fetch(&cfg, &run)?,
    };
    run.log(&format!("wrote {} files", files.len()))?;
    run.finish()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rawdrift: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
