//! One error type, one exit code per failure class, and the JSON shape
//! scripts read off stderr.

use std::path::PathBuf;

use fedanomaly::data::DataError;
use fedanomaly::model::ModelError;
use fedanomaly::privacy::PrivacyError;
use fedanomaly::protocol::ProtocolError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] PrivacyError),
    #[error("{role} process exited with status {code}")]
    Child { role: String, code: i32 },
}

impl CliError {
    /// Exit code 2 is reserved for usage errors (the argument parser owns
    /// it); everything else gets a stable class-specific code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Data(_) => 5,
            CliError::Protocol(_) => 6,
            CliError::Model(_) => 7,
            CliError::Attack(_) => 8,
            CliError::Child { .. } => 9,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Data(_) => "data",
            CliError::Protocol(_) => "protocol",
            CliError::Model(_) => "model",
            CliError::Attack(_) => "attack",
            CliError::Child { .. } => "child",
        }
    }

    /// The single stderr line a failed run emits.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "exit-code": self.exit_code(),
                "message": self.to_string(),
            }
        })
        .to_string()
    }
}

/// Wraps an io error with the path it happened on.
pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}
