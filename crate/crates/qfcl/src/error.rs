use std::path::{Path, PathBuf};

use qfcl_core::contrast::ContrastError;
use qfcl_core::evalkit::EvalError;
use qfcl_core::nn::NnError;
use qfcl_core::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Usage(_) => "usage",
            Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } => "io",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "usage" => 2,
            "io" => 3,
            "config" => 4,
            _ => 5,
        }
    }
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Contrast(ContrastError::Config { .. }) => {
                Error::Config(e.to_string())
            }
            TrainError::Nn(NnError::Config(_)) | TrainError::Text(_) => Error::Config(e.to_string()),
            other => Error::Numeric(other.to_string()),
        }
    }
}

impl From<NnError> for Error {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Autodiff(_) => Error::Numeric(e.to_string()),
            other => Error::Config(other.to_string()),
        }
    }
}

impl From<EvalError> for Error {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Contrast(_) => Error::Numeric(e.to_string()),
            EvalError::Nn(n) => n.into(),
            other => Error::Config(other.to_string()),
        }
    }
}
