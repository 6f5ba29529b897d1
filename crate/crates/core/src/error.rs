use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Temporal demands fail the feasibility precheck.
    #[error("infeasible demands: {0}")]
    Infeasible(String),

    /// A quantity is undefined for the given inputs (e.g. a margin with an empty competitor set).
    #[error("domain error: {0}")]
    Domain(String),

    /// The reference solution was computed for a different setting.
    #[error("reference mismatch: reference hash {reference}, setting hash {setting}")]
    ReferenceMismatch { reference: String, setting: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
