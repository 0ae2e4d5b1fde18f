use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("empty reduction over channel statistics")]
    EmptyReduction,

    #[error("empty {0} block")]
    EmptyDomain(&'static str),

    #[error("{name} = {value} outside [{lo}, {hi}]")]
    Range {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("state error: {0}")]
    State(String),

    #[error("index {index} out of range (limit {limit}) for {what}")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("row {row} sums to {sum}, not 1")]
    Normalization { row: usize, sum: f64 },

    #[error("batch layout error: {0}")]
    Layout(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid shift spec: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error on {path}: {source}")]
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
}
