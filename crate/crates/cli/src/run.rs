//! Run directories: resolved configuration, plain-text log and completion marker.

use std::fs;
use std::path::{Path, PathBuf};

use rawdrift::raw_io::{append_line, atomic_write};

use crate::error::CliError;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const RUN_LOG: &str = "run.log";
const COMPLETE: &str = "complete";

pub struct RunDir {
    pub path: PathBuf,
}

pub enum Prepared {
    Fresh(RunDir),
    /// The directory already holds a finished run of the same configuration.
    Complete(RunDir),
}

impl RunDir {
    /// Open `path` for a run of `command` with the given resolved configuration.
    ///
    /// Without `force`, a directory holding a completed run of the same
    /// configuration is left untouched; one holding a different configuration
    /// is refused. With `force`, previous run files are replaced.
    pub fn prepare(path: &Path, command: &str, resolved: &str, force: bool) -> Result<Prepared, CliError> {
        let dir = RunDir { path: path.to_path_buf() };
        let config_path = path.join(RESOLVED_CONFIG);
        if !force && config_path.exists() {
            let previous = fs::read_to_string(&config_path).map_err(|e| CliError::Io(e.to_string()))?;
            if previous != resolved {
                return Err(CliError::Config(format!(
                    "{} holds a run with a different configuration; pass --force to replace it",
                    path.display()
                )));
            }
            if dir.is_complete() {
                return Ok(Prepared::Complete(dir));
            }
        }
        fs::create_dir_all(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        atomic_write(&config_path, resolved.as_bytes())?;
        atomic_write(&path.join(RUN_LOG), format!("command: {command}\n").as_bytes())?;
        Ok(Prepared::Fresh(dir))
    }

    pub fn is_complete(&self) -> bool {
        fs::read_to_string(self.path.join(RUN_LOG))
            .map(|log| log.lines().last() == Some(COMPLETE))
            .unwrap_or(false)
    }

    /// Append a line to the run log (and echo it to stderr).
    pub fn log(&self, line: &str) -> Result<(), CliError> {
        eprintln!("{line}");
        append_line(&self.path.join(RUN_LOG), line)?;
        Ok(())
    }

    pub fn finish(&self) -> Result<(), CliError> {
        append_line(&self.path.join(RUN_LOG), COMPLETE)?;
        Ok(())
    }
}
