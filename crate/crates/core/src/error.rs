use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::types::GroupKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}, field {field}: {message}")]
    Parse {
        line: usize,
        field: usize,
        message: String,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("column {column} out of range for model with {n_cols} columns")]
    ColumnOutOfRange { column: usize, n_cols: usize },

    #[error("record {record}: {family:?} id {id} missing from vocabulary")]
    UnknownId {
        record: usize,
        family: GroupKind,
        id: i64,
    },

    #[error("invalid model variant: {0}")]
    InvalidVariant(String),

    #[error("divergence at epoch {epoch}, row {row}: non-finite value")]
    SgdDivergence { epoch: usize, row: usize },

    #[error("divergence at sampling step {step}: non-finite residual")]
    McmcDivergence { step: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("report serialization: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
