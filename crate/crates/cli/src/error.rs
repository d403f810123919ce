use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_THRESHOLD: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Model(#[from] morse_qsd::Error),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot read {path}: {source}")]
    Input {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use morse_qsd::Error as E;
        match self {
            CliError::Config(_) | CliError::Input { .. } | CliError::Output { .. } => EXIT_CONFIG,
            CliError::Threshold(_) => EXIT_THRESHOLD,
            CliError::Model(e) => match e {
                E::Domain(_)
                | E::UnsupportedUnit(_)
                | E::InvalidGrid(_)
                | E::GridMismatch
                | E::TooManyStates { .. }
                | E::GridTooSmall { .. }
                | E::InitialState(_)
                | E::WeightSum { .. }
                | E::Config(_)
                | E::StabilityGuard { .. }
                | E::UnknownSnapshot(_) => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_CONFIG => "config",
            EXIT_THRESHOLD => "threshold",
            _ => "numerical",
        }
    }

    /// One-line JSON record for stderr.
    pub fn record(&self) -> String {
        json!({
            "status": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}
