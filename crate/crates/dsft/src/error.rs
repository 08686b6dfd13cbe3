use std::path::PathBuf;

use dsft_core::corpus::CorpusError;
use dsft_core::eval::EvalError;
use dsft_core::masking::MaskError;
use dsft_core::model::ModelError;
use dsft_core::sampler::SampleError;
use dsft_core::tokenizer::TokenizerError;
use dsft_core::trainer::TrainError;
use thiserror::Error;

/// Process exit codes. Stable across versions.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const SELF_CHECK: i32 = 3;
    pub const INTEGRITY: i32 = 4;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("self-check failed: {0}")]
    SelfCheck(String),
    #[error("integrity check failed: {0}")]
    Integrity(String),
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::Io { .. }
            | Error::Parse { .. }
            | Error::Record { .. }
            | Error::Tokenizer(_)
            | Error::Corpus(_)
            | Error::Mask(_)
            | Error::Sample(_) => exit::USAGE,
            Error::Model(ModelError::Config(_) | ModelError::TooLong { .. }) => exit::USAGE,
            Error::Train(TrainError::Config(_) | TrainError::EmptyData | TrainError::Mask(_) | TrainError::Sequence { .. }) => {
                exit::USAGE
            }
            Error::Eval(EvalError::FingerprintMismatch { .. } | EvalError::SeedMismatch { .. }) => exit::INTEGRITY,
            Error::Eval(EvalError::Empty | EvalError::MissingAnswer(_)) => exit::USAGE,
            Error::SelfCheck(_) => exit::SELF_CHECK,
            Error::Integrity(_) => exit::INTEGRITY,
            _ => exit::INTERNAL,
        }
    }
}
