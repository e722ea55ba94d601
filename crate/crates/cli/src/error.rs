use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;
use wentzell_core::error::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported export format `{0}`")]
    UnsupportedFormat(String),

    #[error("invalid output file name `{0}`")]
    OutputName(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Machine-readable error report printed to stderr on failure.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::UnsupportedFormat(_) => 2,
            CliError::Core(CoreError::SolverDiverged { .. } | CoreError::Factorization(_)) => 3,
            CliError::Io { .. } | CliError::OutputName(_) => 4,
            _ => 1,
        }
    }

    pub fn report(&self) -> ErrorReport {
        let mut r = ErrorReport {
            kind: "error",
            message: self.to_string(),
            key: None,
            step: None,
            residual: None,
        };
        match self {
            CliError::Config { key, .. } => {
                r.kind = "config";
                r.key = Some(key.clone());
            }
            CliError::Io { .. } | CliError::OutputName(_) => r.kind = "filesystem",
            CliError::UnsupportedFormat(_) => r.kind = "format",
            CliError::Core(CoreError::SolverDiverged { step, residual }) => {
                r.kind = "solver";
                r.step = Some(*step);
                r.residual = Some(*residual);
            }
            CliError::Core(CoreError::Factorization(_)) => r.kind = "solver",
            CliError::Core(CoreError::InvalidParameter { name, .. }) => {
                r.kind = "config";
                r.key = Some(name.to_string());
            }
            CliError::Core(_) => r.kind = "computation",
            CliError::Json(_) => r.kind = "serialization",
        }
        r
    }
}
