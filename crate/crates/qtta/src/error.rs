use std::path::PathBuf;

/// Failures surfaced by the file layer and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("input not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Format { path: PathBuf, source: qtta_core::Error },
    #[error(transparent)]
    Core(#[from] qtta_core::Error),
    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    /// A check that should hold by construction failed.
    #[error("internal: {0}")]
    Internal(String),
}

impl CliError {
    /// 2 for bad input or usage, 3 for internal invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
