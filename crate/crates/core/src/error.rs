use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical computation produced a non-finite value.
    #[error("non-finite value in {layer}: {detail}")]
    NonFinite { layer: &'static str, detail: String },

    /// The normal matrix of a least-squares fit had no usable pivot.
    #[error("singular least-squares system (pivot {pivot:e} in column {column})")]
    SingularFit { column: usize, pivot: f64 },

    /// No examples survived the harvest filter.
    #[error("harvest produced no usable samples ({discarded} discarded)")]
    EmptyHarvest { discarded: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid inputs rather than I/O.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::NonFinite { .. }
                | Error::SingularFit { .. }
                | Error::EmptyHarvest { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
