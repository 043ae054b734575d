use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, structure).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{what} did not converge after {iterations} iterations")]
    NumericFailure { what: &'static str, iterations: usize },

    #[error("binomial coefficient C({n}, {k}) overflows 64 bits")]
    Overflow { n: usize, k: usize },

    #[error("enumeration of {count} subsets exceeds the budget of {budget}")]
    Budget { count: u64, budget: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Diverged { epoch: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    /// An error raised while processing one item of a larger job.
    #[error("{what} {index}: {source}")]
    At { what: &'static str, index: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn at(what: &'static str, index: usize) -> impl FnOnce(Error) -> Error {
        move |e| Error::At { what, index, source: Box::new(e) }
    }

    /// The innermost error, looking through [`Error::At`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::At { source, .. } => source.root(),
            e => e,
        }
    }
}
