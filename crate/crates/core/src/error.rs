use std::io;

use thiserror::Error;

use crate::memory::GenderTag;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("degenerate fair region: no memory slots tagged {0:?}")]
    DegenerateRegion(GenderTag),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 configuration, 3 data, 4 numeric failure. I/O, checkpoint and
    /// domain problems (e.g. an empty evaluation corpus) count as data errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Domain(_) | Error::Io { .. } | Error::Checkpoint(_) => 3,
            Error::NonFiniteGradient { .. }
            | Error::NonFiniteLoss { .. }
            | Error::Dimension { .. }
            | Error::Contract(_)
            | Error::DegenerateRegion(_) => 4,
        }
    }
}
