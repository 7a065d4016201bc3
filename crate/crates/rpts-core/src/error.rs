//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("invalid action for {env} environment: {reason}")]
    InvalidAction { env: &'static str, reason: String },

    /// Raised by non-contextual entry points when the environment's
    /// observation model depends on a slice context.
    #[error("{0} requires a slice context; use the netslice module")]
    ContextRequired(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid particle system: {0}")]
    InvalidParticles(String),

    #[error("kl divergence undefined: {0}")]
    KlUndefined(String),

    /// Two divergence lines coincide, so the envelope breakpoint structure
    /// is ambiguous (particle indices refer to the input order).
    #[error("divergence lines of particles {i} and {j} coincide within tolerance")]
    DuplicateLines { i: usize, j: usize },

    /// Three lines meet the lower envelope at one point.
    #[error("particles {i}, {j}, {k} are concurrent on the lower envelope at r = {r}")]
    ConcurrentLines { i: usize, j: usize, k: usize, r: f64 },

    #[error("degenerate particle pair: {0}")]
    DegeneratePair(String),

    #[error("pair is not counter-reinforcing: classified as {0}")]
    NotCrPair(&'static str),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    /// Wraps an io error with the offending path.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
