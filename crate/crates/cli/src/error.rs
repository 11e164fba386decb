use serde_json::json;
use thiserror::Error;

use crate::checkpoint::CheckpointError;

/// Failure of a CLI command, mapped to an exit code and a JSON error record.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, bad flags, or a checkpoint that does not fit the config.
    #[error("{0}")]
    Config(String),
    #[error("non-finite gradient at iteration {iteration}")]
    Numerical { iteration: u64 },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    /// Checkpoint parsed but some product is off its manifold.
    #[error("{count} product(s) have constraint residual >= {tol:e}")]
    Infeasible { count: usize, tol: f64 },
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } | CliError::Checkpoint(_) | CliError::Infeasible { .. } => 3,
            CliError::Io(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Numerical { .. } => "numerical",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Infeasible { .. } => "infeasible",
            CliError::Io(_) => "io",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Numerical { iteration } = self {
            v["iteration"] = json!(iteration);
        }
        v
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
