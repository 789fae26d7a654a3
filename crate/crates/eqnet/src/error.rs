use std::io;
use std::path::{Path, PathBuf};

use eqnet_core::dataset::DatasetError;
use eqnet_core::equilibrium::{OracleError, SolveError};
use eqnet_core::eval::EvalError;
use eqnet_core::generators::ConfigError;
use eqnet_core::graph::GraphError;
use eqnet_core::tokenizer::TokenError;
use eqnet_core::transformer::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error("{path}: not a checkpoint ({message})")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Generator(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Failed(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::Io { path, source }
    }

    pub fn parse(path: impl AsRef<Path>, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: path.as_ref().to_path_buf(),
            line,
            message: message.into(),
        }
    }

    /// 2 for usage and configuration mistakes, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::Generator(_)
            | Error::Model(ModelError::Config(_))
            | Error::Dataset(DatasetError::Config(_))
            | Error::Eval(EvalError::Config(_)) => 2,
            _ => 1,
        }
    }

    /// Short stable identifier for the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Usage(_) => "usage",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Generator(_) => "config",
            Error::Graph(_) => "graph",
            Error::Solve(_) => "solve",
            Error::Oracle(_) => "oracle",
            Error::Token(_) => "token",
            Error::Dataset(DatasetError::BudgetExceeded { .. }) => "budget",
            Error::Dataset(_) => "dataset",
            Error::Model(ModelError::Numerical { .. }) => "numerical",
            Error::Model(_) => "model",
            Error::Eval(_) => "eval",
            Error::Failed(_) => "failed",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
