use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("vocabulary error on line {line}: unknown token {token:?}")]
    Vocabulary { line: usize, token: String },

    #[error("impossible alignment for utterance {index}: {target_len} labels ({repeats} repeats) need more than {input_len} frames")]
    ImpossibleAlignment {
        index: usize,
        target_len: usize,
        repeats: usize,
        input_len: usize,
    },

    #[error("mixup plan error: {0}")]
    Plan(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input (configs, manifests, files),
    /// as opposed to failures while computing.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_)
                | Error::Usage(_)
                | Error::Config(_)
                | Error::Format { .. }
                | Error::Parse { .. }
                | Error::Vocabulary { .. }
                | Error::ImpossibleAlignment { .. }
                | Error::Input(_)
                | Error::UndefinedMetric(_)
        )
    }
}

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(format!($($arg)*))
    };
}
pub(crate) use dim_err;
