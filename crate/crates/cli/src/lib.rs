//! Command-line layer: run configs, subcommands, artifact writing and the
//! acceptance suite behind `tempfair verify`.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use thiserror::Error;

pub const VERSION: &str = concat!("tempfair ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible demands: {0}")]
    Infeasible(String),

    #[error("oracle did not converge: {0}")]
    NonConvergence(String),

    #[error("oracle methods disagree: {0}")]
    Disagreement(String),

    #[error("reference mismatch: reference hash {reference}, setting hash {setting}")]
    ReferenceMismatch { reference: String, setting: String },

    #[error("acceptance suite failed: {0}")]
    Acceptance(String),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// 0 success, 2 config/feasibility, 3 oracle non-convergence or
    /// disagreement, 4 reference mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Infeasible(_) => 2,
            Self::NonConvergence(_) | Self::Disagreement(_) => 3,
            Self::ReferenceMismatch { .. } => 4,
            Self::Acceptance(_) | Self::Other(_) => 1,
        }
    }
}

impl From<tempfair_core::Error> for CliError {
    fn from(e: tempfair_core::Error) -> Self {
        use tempfair_core::Error as E;
        match e {
            E::Config(m) | E::Domain(m) => Self::Config(m),
            E::Infeasible(m) => Self::Infeasible(m),
            E::ReferenceMismatch { reference, setting } => Self::ReferenceMismatch { reference, setting },
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Other(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Other(format!("json error: {e}"))
    }
}
