use std::path::PathBuf;

/// Errors raised by the diagnostics library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("non-finite value at sample {index}")]
    NonFinite { index: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("region violation: {0}")]
    Region(String),

    #[error("time step {dt} violates stability limit {limit}")]
    Cfl { dt: f64, limit: f64 },

    #[error("{path}: {reason} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
