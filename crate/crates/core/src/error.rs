use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or out-of-range input data (edge lists, traces, arguments).
    #[error("input error: {0}")]
    Input(String),

    /// Input error tied to a specific line of a file.
    #[error("{}:{line}: {msg}", path.display())]
    InputAt {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A simulator invariant was violated while running.
    #[error("consistency error at iteration {iteration}, device {device}: {msg}")]
    Consistency {
        iteration: u64,
        device: usize,
        msg: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Consistency { .. } => 2,
            _ => 1,
        }
    }
}
