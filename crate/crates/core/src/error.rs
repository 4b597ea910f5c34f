use std::path::PathBuf;

use thiserror::Error;

use crate::conic::SolveStatus;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver finished with status {status:?}: {context}")]
    Solver { status: SolveStatus, context: String },

    #[error("race problem is infeasible: {0}")]
    Infeasible(String),

    #[error("integration diverged: {0}")]
    Integration(String),

    #[error("simulation aborted at s = {position:.1} m: {reason}")]
    SimulationAborted { position: f64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::Solver { .. } => "solver",
            Error::Infeasible(_) => "infeasible",
            Error::Integration(_) => "integration",
            Error::SimulationAborted { .. } => "simulation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::TomlDe(_) | Error::TomlSer(_) => "toml",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
