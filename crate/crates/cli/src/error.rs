use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Schema violation; `key` is the path to the offending entry.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{0}")]
    Core(#[from] toolnet::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("prediction file {path}: {message}")]
    Predictions { path: PathBuf, message: String },
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for data problems, 4 for non-finite
    /// values, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use toolnet::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) => 2,
                E::Numeric(_) => 4,
                E::Data(_)
                | E::Evaluation(_)
                | E::MissingParameters(_)
                | E::Checkpoint(_)
                | E::Io { .. }
                | E::Image { .. }
                | E::Csv { .. }
                | E::Json { .. } => 3,
                E::State(_) => 1,
            },
            CliError::Io { .. } | CliError::Predictions { .. } => 3,
        }
    }
}
