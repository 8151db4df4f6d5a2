use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Engine(#[from] region_sched::Error),

    #[error("cannot write {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use region_sched::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Engine(E::Numeric { .. }) => 3,
            CliError::Engine(E::Manifest(_)) => 4,
            CliError::Engine(E::Param(_) | E::Schedule(_)) => 2,
            CliError::Engine(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
