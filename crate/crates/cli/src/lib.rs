//! Command-line pipeline over the `indoor-poi` library: ingest scan logs,
//! extract daily POI summaries, detect shared POI across users, generate
//! synthetic scenarios and score summaries against ground truth.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod score;

use std::fmt;

use indoor_poi::community::CommunityError;
use indoor_poi::ingest::IngestError;
use indoor_poi::registry::RegistryError;
use indoor_poi::simgen::SimError;

/// Process exit status for a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Malformed input, unreadable files, bad configuration.
    Input,
    /// Well-formed input the pipeline cannot act on.
    Domain,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Input => 2,
            ExitKind::Domain => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Input,
            message: message.into(),
        }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Domain,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<RegistryError> for CliError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::UnknownUser(_) | RegistryError::EmptyCluster => CliError::domain(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

impl From<CommunityError> for CliError {
    fn from(e: CommunityError) -> Self {
        match e {
            CommunityError::InvalidThreshold(_) => CliError::input(e.to_string()),
            _ => CliError::domain(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
