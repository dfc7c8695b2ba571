use thiserror::Error;

use crate::harness::ConfigError;
use crate::io::IoError;
use crate::linop::LinopError;
use crate::penalty::PenaltyError;
use crate::risk::RiskError;
use crate::sensitivity::SensitivityError;
use crate::solver::SolverError;

/// Crate-level error, wrapping the error of each module.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linop(#[from] LinopError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("configuration error {0}")]
    Config(#[from] ConfigError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
