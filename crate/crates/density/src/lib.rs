//! Simulation studies, configuration files, persistence and the command line
//! around `besov-core`.

use std::path::PathBuf;

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod io;
pub mod study;
pub mod truth;

pub use config::{Config, ConfigError};
pub use diagnostics::{prior_diagnostics, DiagnosticsConfig, PriorDiagnostics};
pub use study::{check_quality, contraction_study, Bypass, ErrorSummary, StudyConfig, StudyResult};
pub use truth::{make_truth, simulate_data, Truth, TruthKind, TruthSpec};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Parse(#[from] ConfigError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("study quality check failed: {0}")]
    Quality(String),
    #[error(transparent)]
    Core(#[from] besov_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 for configuration and input problems, 2 for
    /// numeric failures, 3 when a study fails its quality check.
    pub fn exit_code(&self) -> i32 {
        use besov_core::Error as C;
        match self {
            Error::Numeric(_) => 2,
            Error::Core(C::NonFinite(_) | C::DegenerateFit(_)) => 2,
            Error::Quality(_) => 3,
            _ => 1,
        }
    }
}
