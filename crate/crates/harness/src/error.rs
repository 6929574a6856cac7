use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] optenet::Error),

    #[error("unknown generator `{0}` (expected one of: mdp, noisy-ring, random, decoy)")]
    UnknownGenerator(String),

    #[error("generator `{name}` gave up after {attempts} attempts")]
    GenerationExhausted { name: String, attempts: usize },

    #[error("cannot build an undercomplete model with {observations} observations and {states} states")]
    Undercomplete { states: usize, observations: usize },

    #[error("{failed} of {total} seeds failed")]
    SeedsFailed { failed: usize, total: usize },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
