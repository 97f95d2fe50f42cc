use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum FedRlError {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite parameter in row {row}")]
    NonFinite { row: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The server weight on other agents is zero, so the sum of the
    /// non-adversarial shares cannot be recovered.
    #[error("degenerate smoothing weights (beta = {beta})")]
    DegenerateWeights { beta: f64 },

    #[error("normalized parameter distance is undefined for a zero-norm table")]
    UndefinedDistance,

    #[error("attack score is undefined: baseline win ratio is zero")]
    UndefinedScore,

    #[error("no solvable maze after {attempts} attempts (seed {seed}, hell density {density})")]
    MazeGeneration { seed: u64, density: f64, attempts: usize },

    #[error("maze parse error at line {line}: {msg}")]
    MazeParse { line: usize, msg: String },

    #[error("invalid maze: {0}")]
    InvalidMaze(String),

    #[error("policy snapshot: {0}")]
    Snapshot(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = FedRlError> = std::result::Result<T, E>;

impl FedRlError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FedRlError::Io { path: path.into(), source }
    }
}
