//! Experiment pipelines behind the `collapse-lab` binary.

pub mod commands;
pub mod output;
pub mod spec;

use collapse_lab::Error;

pub use commands::{cmd_report, cmd_theory, cmd_train, cmd_verify, Options};
pub use spec::ExperimentSpec;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// A check ran and failed (or training diverged).
    #[error("check failed: {0}")]
    Check(String),
    #[error("invalid input: {0}")]
    Input(String),
    /// The theory's precondition does not hold for this spec.
    #[error("theory precondition violated: {0}")]
    Theory(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Check(_) => 1,
            Self::Input(_) => 2,
            Self::Theory(_) => 3,
        }
    }

    pub(crate) fn from_core(e: Error) -> Self {
        match e {
            Error::Diverged { .. } => Self::Check(e.to_string()),
            Error::NoGuarantee { .. } => Self::Theory(e.to_string()),
            _ => Self::Input(e.to_string()),
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::Input(format!("{}: {e}", path.display()))
    }
}
