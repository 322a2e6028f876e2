use std::path::PathBuf;

/// Failures of a CLI command, each tied to a stable exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unparsable or invalid configuration, or an incompatible checkpoint.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training stopped on a non-finite loss or gradient.
    #[error("numerical halt: {0}")]
    Halt(String),

    /// A diagnostic or sub-run did not pass.
    #[error("check failed: {0}")]
    Check(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] mmf_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 1 check failure, 2 config error, 3 numerical halt.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Halt(_) => 3,
            Self::Check(_) | Self::Io { .. } | Self::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
