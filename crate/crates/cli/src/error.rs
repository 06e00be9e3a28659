use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed input: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Estimation(#[from] clusterjack_core::Error),
}

impl CliError {
    /// 2 for usage and input problems, 1 for estimation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Estimation(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
