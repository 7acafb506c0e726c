use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LpcaError>;

/// Errors raised by the estimators and their I/O helpers.
#[derive(Debug, Error)]
pub enum LpcaError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("internal error: {0}")]
    Internal(String),

    /// A failure inside one stage of a multi-stage pipeline.
    #[error("step {step} failed: {source}")]
    Step {
        step: String,
        #[source]
        source: Box<LpcaError>,
    },
}

/// Coarse error classes, used by the CLI to choose an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl LpcaError {
    pub fn class(&self) -> ErrorClass {
        match self {
            LpcaError::Config(_) => ErrorClass::Config,
            LpcaError::Io { .. } | LpcaError::Parse(_) | LpcaError::Contract(_) => {
                ErrorClass::Data
            }
            LpcaError::Numerical(_) | LpcaError::Internal(_) => ErrorClass::Numerical,
            LpcaError::Step { source, .. } => source.class(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LpcaError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_step(step: impl Into<String>) -> impl FnOnce(LpcaError) -> LpcaError {
        let step = step.into();
        move |source| LpcaError::Step {
            step,
            source: Box::new(source),
        }
    }
}
