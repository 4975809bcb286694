use std::path::PathBuf;

use lsrtr::dataset::DatasetError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("{0}")]
    Data(String),
    #[error("every trial diverged ({0})")]
    AllDiverged(String),
    #[error(transparent)]
    Solver(#[from] lsrtr::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("self-test failed: {0}")]
    SelfTest(String),
}

impl CliError {
    /// 0 success, 1 configuration, 2 data, 3 all trials diverged,
    /// 4 self-test failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(e) if is_config_error(e) => 1,
            CliError::AllDiverged(_) => 3,
            CliError::SelfTest(_) => 4,
            _ => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> Self {
        let path = path.into();
        move |source| CliError::Csv { path, source }
    }
}

fn is_config_error(e: &lsrtr::Error) -> bool {
    matches!(
        e,
        lsrtr::Error::InvalidConfig(_)
            | lsrtr::Error::RankExceedsDim { .. }
            | lsrtr::Error::WideMatrix { .. }
    )
}

pub type CliResult<T> = Result<T, CliError>;

impl From<lsrtr::tensor::TensorError> for CliError {
    fn from(e: lsrtr::tensor::TensorError) -> Self {
        CliError::Solver(e.into())
    }
}
