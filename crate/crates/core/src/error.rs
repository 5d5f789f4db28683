use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unstable discretization: alpha*dt/M = {0} must be < 1")]
    UnstableDiscretization(f64),

    #[error("prediction horizon must be at least 1")]
    EmptyHorizon,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("kkt residual requested for a non-optimal solution")]
    NotOptimal,

    #[error("paired episodes have different seeds ({mpc} vs {pid})")]
    SeedMismatch { mpc: u64, pid: u64 },

    #[error("no paired results to aggregate")]
    EmptyAggregate,

    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
