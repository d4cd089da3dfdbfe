use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "refusing exact enumeration: {k}^{n} allocations exceeds the budget of {budget} terms"
    )]
    BudgetExceeded { k: usize, n: usize, budget: u64 },

    #[error("{source_name}, line {line}: cannot parse {content:?} as a number")]
    Parse {
        source_name: String,
        line: usize,
        content: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
