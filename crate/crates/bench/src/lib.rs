//! Experiment harness for cyclic-conditional models on 2D toy data:
//! dataset generators, the training schedules, sample generation and the
//! metrics that summarize a run.

pub mod config;
pub mod data;
pub mod eval;
pub mod metrics;
pub mod optim;
pub mod run;
pub mod train;

use std::path::PathBuf;

use thiserror::Error;

use cygen_core::autodiff::AutodiffError;
use cygen_core::finite::FiniteError;
use cygen_core::losses::LossError;
use cygen_core::models::ModelError;
use cygen_core::samplers::SamplerError;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Bad configuration or arguments; reported with exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Finite(#[from] FiniteError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    pub fn is_usage(&self) -> bool {
        matches!(self, BenchError::Usage(_))
    }
}
