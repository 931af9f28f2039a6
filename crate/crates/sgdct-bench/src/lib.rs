//! Experiment runner around the `sgdct` library: declarative run configs,
//! seeded parallel case execution with per-case RNG substreams, error
//! statistics, and deterministic CSV/report emission.

use thiserror::Error;

pub mod config;
pub mod report;
pub mod runner;

#[derive(Error, Debug)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("estimation error: {0}")]
    Estimation(#[from] sgdct::SgdctError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

impl BenchError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
