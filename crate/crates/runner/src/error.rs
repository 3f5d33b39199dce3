use std::path::PathBuf;

use tending_mappo::MappoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration {path}:\n  - {}", .problems.join("\n  - "))]
    Invalid { path: PathBuf, problems: Vec<String> },
    #[error("output directory {0} already contains a run; choose a new --out or pass --resume")]
    OutputExists(PathBuf),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
    #[error("{context}: {source}")]
    Training {
        context: String,
        #[source]
        source: MappoError,
    },
    #[error("{0}")]
    Data(String),
}

/// Failure classes with distinct process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Numeric,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Numeric => 3,
            Category::Io => 4,
        }
    }
}

impl RunnerError {
    pub fn category(&self) -> Category {
        match self {
            RunnerError::Parse { .. } | RunnerError::Invalid { .. } | RunnerError::OutputExists(_) => Category::Config,
            RunnerError::Io { .. } | RunnerError::Csv { .. } | RunnerError::Data(_) => Category::Io,
            RunnerError::Training { source, .. } => match source {
                MappoError::NonFinite { .. } => Category::Numeric,
                MappoError::InvalidConfig(_) | MappoError::Incompatible(_) => Category::Config,
                MappoError::Nn(tending_nn::NnError::Io(_) | tending_nn::NnError::Checkpoint(_)) => Category::Io,
                MappoError::Trace(_) => Category::Io,
                _ => Category::Numeric,
            },
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| RunnerError::Io { context, source }
    }

    pub fn csv(context: impl Into<String>) -> impl FnOnce(csv::Error) -> Self {
        let context = context.into();
        move |source| RunnerError::Csv { context, source }
    }

    pub fn training(context: impl Into<String>) -> impl FnOnce(MappoError) -> Self {
        let context = context.into();
        move |source| RunnerError::Training { context, source }
    }
}
