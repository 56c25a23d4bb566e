use std::io;
use std::path::{Path, PathBuf};

/// Errors of the pipeline, files and command line.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ctharm_core::Error),
    /// A core error raised inside a named pipeline phase.
    #[error("{phase}: {source}")]
    Phase {
        phase: &'static str,
        source: ctharm_core::Error,
    },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    /// A file that exists but does not parse.
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("integrity error: {0}")]
    Integrity(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 for bad input, 3 for integrity violations, 4 for
    /// numeric or training failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use ctharm_core::Error as C;
        let core = match self {
            Error::Core(e) | Error::Phase { source: e, .. } => e,
            Error::Validation(_) | Error::Format { .. } => return 2,
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => return 2,
            Error::Io { .. } => return 1,
            Error::Integrity(_) => return 3,
        };
        let mut e = core;
        while let C::Extraction { source, .. } = e {
            e = source;
        }
        match e {
            C::Integrity(_) => 3,
            C::Numeric { .. } | C::Divergence { .. } => 4,
            _ => 2,
        }
    }
}

/// Attaches a phase name to core errors.
pub(crate) trait PhaseContext<T> {
    fn phase(self, phase: &'static str) -> Result<T>;
}

impl<T> PhaseContext<T> for ctharm_core::Result<T> {
    fn phase(self, phase: &'static str) -> Result<T> {
        self.map_err(|source| Error::Phase { phase, source })
    }
}
