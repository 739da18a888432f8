use std::path::PathBuf;

use thiserror::Error;

use crate::activation::ActivationKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("activation {kind} has no derivative of order {order} at x = {x}")]
    NonSmooth {
        kind: ActivationKind,
        order: u8,
        x: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("student neuron {index} has zero norm; correlations are undefined")]
    DegenerateNeuron { index: usize },

    #[error("activation mismatch: {0}")]
    KindMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no sign change of the fixed-point function for {kind} at u = {u}")]
    NoBracket { kind: ActivationKind, u: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error("flow did not converge: {0}")]
    NotConverged(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
