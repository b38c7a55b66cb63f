use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Format(String),
    #[error("payload holds {found} bytes, header promises {expected}")]
    Truncation { expected: u64, found: u64 },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] fsosr_core::Error),
}

impl Error {
    /// Machine-parsable category printed by the CLI.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Truncation { .. } => "truncation",
            Error::Data(_) => "data",
            Error::Core(e) => e.kind().as_str(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
