//! Failure kinds and their stable process exit codes.

use std::fmt;

use rawdrift::drift_controls::DriftError;
use rawdrift::isp_static::IspError;
use rawdrift::raw_io::RawIoError;
use rawdrift::task_models::TaskError;

/// | code | meaning |
/// |------|---------|
/// | 0 | success (including skipped complete runs) |
/// | 2 | configuration or usage error |
/// | 3 | I/O error or failed transfer |
/// | 4 | numeric abort (non-finite loss, gradient or objective) |
/// | 5 | gradient check failed |
/// | 6 | checksum mismatch while fetching |
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Io(String),
    Numeric(String),
    Gradcheck(String),
    Checksum(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Numeric(_) => 4,
            Self::Gradcheck(_) => 5,
            Self::Checksum(_) => 6,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Self::Config(m) => ("configuration error", m),
            Self::Io(m) => ("i/o error", m),
            Self::Numeric(m) => ("numeric abort", m),
            Self::Gradcheck(m) => ("gradient check failed", m),
            Self::Checksum(m) => ("checksum mismatch", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl std::error::Error for CliError {}

impl From<RawIoError> for CliError {
    fn from(e: RawIoError) -> Self {
        match e {
            RawIoError::Io { .. } => Self::Io(e.to_string()),
            RawIoError::Manifest(_) => Self::Config(e.to_string()),
            other => Self::Io(other.to_string()),
        }
    }
}

impl From<IspError> for CliError {
    fn from(e: IspError) -> Self {
        match e {
            IspError::Raw(r) => r.into(),
            IspError::NonFinite(_) => Self::Numeric(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Io(r) => r.into(),
            TaskError::Isp(i) => i.into(),
            TaskError::NumericAbort { .. } => Self::Numeric(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<DriftError> for CliError {
    fn from(e: DriftError) -> Self {
        match e {
            DriftError::Task(t) => t.into(),
            DriftError::Isp(i) => i.into(),
            DriftError::Io(r) => r.into(),
            other => Self::Config(other.to_string()),
        }
    }
}
