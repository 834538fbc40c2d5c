use std::path::{Path, PathBuf};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Failure = 1,
    Config = 2,
    Io = 3,
    EmptyBatch = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("nothing to do: {0}")]
    EmptyBatch(String),
    #[error(transparent)]
    Core(#[from] mdis_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit(&self) -> Exit {
        use mdis_core::Error as E;
        match self {
            CliError::Config(_) => Exit::Config,
            CliError::Io { .. } => Exit::Io,
            CliError::EmptyBatch(_) => Exit::EmptyBatch,
            CliError::Core(e) => match e {
                E::InvalidParams { .. } | E::ParamsParse { .. } | E::ScalesOutOfRange { .. } => Exit::Config,
                E::Io { .. } | E::Image(_) | E::Csv(_) | E::Format { .. } => Exit::Io,
                E::Empty(_) => Exit::EmptyBatch,
                _ => Exit::Failure,
            },
        }
    }
}
