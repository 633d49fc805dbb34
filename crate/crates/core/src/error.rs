use thiserror::Error;

/// Errors raised across the exploration pipeline.
///
/// Constraint violations are not errors: they are reported through
/// [`crate::design_space::ConstraintReport`].
#[derive(Debug, Error)]
pub enum DseError {
    #[error("design space is empty: {0}")]
    EmptySpace(String),

    #[error("component database has no entry for {0}")]
    IncompleteDb(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("workload cannot be mapped: {0}")]
    Unmappable(String),

    #[error("tile does not fit in the core buffer: {0}")]
    TileTooLarge(String),

    #[error("chunk region too small: {0}")]
    RegionTooSmall(String),

    #[error("no bandwidth on a required link: {0}")]
    Unroutable(String),

    #[error("graph contains a cycle")]
    CycleDetected,

    #[error("simulation deadlocked at cycle {cycle}: {detail}")]
    Deadlock { cycle: u64, detail: String },

    #[error("kernel matrix is singular after maximum jitter")]
    SingularKernel,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DseError> = std::result::Result<T, E>;

impl From<serde_json::Error> for DseError {
    fn from(e: serde_json::Error) -> Self {
        DseError::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for DseError {
    fn from(e: toml::de::Error) -> Self {
        DseError::Parse(e.to_string())
    }
}

impl From<csv::Error> for DseError {
    fn from(e: csv::Error) -> Self {
        DseError::Parse(e.to_string())
    }
}
