//! Experiment runner behind the `dalab` binary: named presets reproducing
//! the figure setups, arbitrary JSON-configured run grids, and the
//! Monte-Carlo verification suite. Every run writes a manifest first, then
//! long-format curve CSVs; reruns from the same manifest are byte-identical.

use thiserror::Error;

pub mod config;
pub mod presets;
pub mod runner;
pub mod verify;

/// Errors carry the process exit code: 2 validation, 3 divergence,
/// 4 certificate failure, 1 everything else.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Divergence(String),
    #[error("verification failed: {0}")]
    CertificateFailure(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::CertificateFailure(_) => 4,
        }
    }

    pub(crate) fn io(context: &str, err: impl std::fmt::Display) -> CliError {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl From<dalab::trainers::TrainError> for CliError {
    fn from(e: dalab::trainers::TrainError) -> Self {
        match e {
            dalab::trainers::TrainError::Diverged { .. } => CliError::Divergence(e.to_string()),
            dalab::trainers::TrainError::Config(_) => CliError::Validation(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<dalab::mlp::MlpError> for CliError {
    fn from(e: dalab::mlp::MlpError) -> Self {
        match e {
            dalab::mlp::MlpError::Diverged { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<dalab::data::DataError> for CliError {
    fn from(e: dalab::data::DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<dalab::oracle::OracleError> for CliError {
    fn from(e: dalab::oracle::OracleError) -> Self {
        match e {
            dalab::oracle::OracleError::Diverged { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}
