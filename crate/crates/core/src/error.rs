use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("rank {rank} exceeds dimension {dim} in mode {mode}")]
    RankExceedsDim { mode: usize, rank: usize, dim: usize },
    #[error("inconsistent parameters: {0}")]
    Inconsistent(String),
    #[error("matrix is rank deficient (|R_jj| = {pivot:e})")]
    RankDeficient { pivot: f64 },
    #[error("matrix is {rows}×{cols}; orthonormal columns need rows ≥ cols")]
    WideMatrix { rows: usize, cols: usize },
    #[error("cannot orthogonalize a zero matrix")]
    ZeroMatrix,
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("invalid response y[{index}] = {value} for {family} family")]
    InvalidResponse {
        index: usize,
        value: f64,
        family: &'static str,
    },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Metric(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
