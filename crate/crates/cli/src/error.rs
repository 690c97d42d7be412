use std::path::PathBuf;

use predihealth::fhir::FhirError;
use predihealth::sim::SimError;
use predihealth::store::StoreError;
use predihealth::stratify::StratifyError;
use predihealth_gateway::{ReplayError, ServeError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad config ({source_name}): {reason}")]
    BadConfig { source_name: String, reason: String },
    #[error("{}: {reason}", path.display())]
    Input { path: PathBuf, reason: String },
    #[error("cannot write {}: {reason}", path.display())]
    Output { path: PathBuf, reason: String },
    #[error(transparent)]
    Stratify(#[from] StratifyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Serve(#[from] ServeError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Export(#[from] FhirError),
    #[error("{count} of {messages} message(s) rejected")]
    Rejected { count: usize, messages: usize },
    #[error("{0}")]
    Usage(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// 1 for problems the operator can fix, 2 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Output { .. } | CliError::Internal(_) => 2,
            CliError::Serve(e) => match e {
                ServeError::PortInUse { .. } | ServeError::Bind { .. } => 1,
                ServeError::Store(StoreError::Corrupt { .. }) => 1,
                _ => 2,
            },
            CliError::Export(FhirError::Store(_)) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::BadConfig { .. } => "bad_config",
            CliError::Input { .. } => "bad_input",
            CliError::Output { .. } => "output_failed",
            CliError::Stratify(_) => "stratify",
            CliError::Sim(_) => "invalid_spec",
            CliError::Serve(ServeError::PortInUse { .. }) => "port_in_use",
            CliError::Serve(_) => "serve",
            CliError::Replay(ReplayError::GatewayUnavailable { .. }) => "gateway_unavailable",
            CliError::Replay(_) => "replay",
            CliError::Export(FhirError::UnknownPatient(_)) => "unknown_patient",
            CliError::Export(_) => "export",
            CliError::Rejected { .. } => "rejected",
            CliError::Usage(_) => "usage",
            CliError::Internal(_) => "internal",
        }
    }
}
