use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

use crate::context::TrainLog;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Stable error categories. The CLI prints these verbatim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    Dimension,
    UndefinedSimilarity,
    PoisonedGradient,
    Infeasible,
    Validation,
    Consistency,
    Divergence,
    Config,
}

impl ErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Dimension => "dimension",
            ErrorKind::UndefinedSimilarity => "undefined-similarity",
            ErrorKind::PoisonedGradient => "poisoned-gradient",
            ErrorKind::Infeasible => "infeasible",
            ErrorKind::Validation => "validation",
            ErrorKind::Consistency => "consistency",
            ErrorKind::Divergence => "divergence",
            ErrorKind::Config => "config",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    Dimension {
        expected: usize,
        found: usize,
        what: &'static str,
    },
    UndefinedSimilarity,
    PoisonedGradient(&'static str),
    Infeasible(String),
    Validation(String),
    Consistency(String),
    Diverged {
        epoch: usize,
        loss: f64,
        log: Box<TrainLog>,
    },
    Config(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension { .. } => ErrorKind::Dimension,
            Error::UndefinedSimilarity => ErrorKind::UndefinedSimilarity,
            Error::PoisonedGradient(_) => ErrorKind::PoisonedGradient,
            Error::Infeasible(_) => ErrorKind::Infeasible,
            Error::Validation(_) => ErrorKind::Validation,
            Error::Consistency(_) => ErrorKind::Consistency,
            Error::Diverged { .. } => ErrorKind::Divergence,
            Error::Config(_) => ErrorKind::Config,
        }
    }

    pub(crate) fn dim(what: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            expected,
            found,
            what,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension {
                expected,
                found,
                what,
            } => {
                write!(f, "{what}: expected {expected}, found {found}")
            }
            Error::UndefinedSimilarity => f.write_str("cosine similarity of a zero-norm vector"),
            Error::PoisonedGradient(what) => write!(f, "non-finite value in {what}"),
            Error::Infeasible(msg) | Error::Validation(msg) | Error::Consistency(msg) => {
                f.write_str(msg)
            }
            Error::Diverged { epoch, loss, .. } => {
                write!(f, "training diverged at epoch {epoch} (loss {loss:e})")
            }
            Error::Config(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
