use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
    #[error("{}: malformed JSON: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] ilbench_core::Error),
    #[error("{0}")]
    Runtime(String),
    #[error("{0} verification check(s) failed")]
    VerifyFailed(usize),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Process exit status: 2 config, 3 files, 4 numerical failure, 5 failed sweep cells, 6 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::File { .. } | CliError::Json { .. } | CliError::Csv(_) => 3,
            CliError::Core(_) => 4,
            CliError::Runtime(_) => 5,
            CliError::VerifyFailed(_) => 6,
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::File { path, source }
    }
}
