use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what} did not converge within {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("no message on edge ({from}, {to})")]
    MissingMessage { from: usize, to: usize },

    #[error("observation for ({observer}, {sender}) which is not an edge")]
    NotAnEdge { observer: usize, sender: usize },

    #[error("spectral radius estimates disagree: power {power:e}, characteristic {cubic:e}")]
    SpectralDisagreement { power: f64, cubic: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
