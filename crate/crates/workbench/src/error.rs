use std::path::PathBuf;

/// Failures of the workbench: file handling and validation on top of the
/// modelling errors of the core.
#[derive(Debug, thiserror::Error)]
pub enum WorkbenchError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}, line {line}: {message}", path.display())]
    Row { path: PathBuf, line: u64, message: String },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: String, expected: u64 },

    #[error(transparent)]
    Core(#[from] dynmed_core::Error),

    #[error("{0}")]
    Usage(String),
}

impl WorkbenchError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        WorkbenchError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        WorkbenchError::Format { path: path.into(), message: message.to_string() }
    }

    /// Process exit status: 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkbenchError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, WorkbenchError>;
