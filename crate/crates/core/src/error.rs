use thiserror::Error;

/// Errors surfaced by the simulation core.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of its physical or numerical domain.
    #[error("invalid {what}: {why}")]
    InvalidSpec { what: &'static str, why: String },

    /// A signal is too short, empty, or otherwise unusable for the requested
    /// operation.
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    /// The loop integrator left its stability/accuracy envelope.
    #[error("integration failure: {0}")]
    Integration(String),

    /// A probability or rate fell outside [0, 1].
    #[error("invalid probability {value}: {context}")]
    InvalidProbability { value: f64, context: &'static str },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed record or CSV content.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::InvalidSpec {
            what,
            why: why.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
