//! Crate-wide error and its coarse classification.

use thiserror::Error;

use crate::attribution::AttributionError;
use crate::data::DataError;
use crate::harness::HarnessError;
use crate::img_metrics::ImageError;
use crate::llm::LlmError;
use crate::prompts::PromptError;
use crate::stats::StatsError;
use crate::trees::TreeError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{0}")]
    Usage(String),
}

/// Who is at fault: the caller's arguments, the input data, or a remote
/// service.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    External,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Usage(_) => ErrorClass::Usage,
            Error::Llm(e) => llm_class(e),
            Error::Harness(HarnessError::Aborted { cause, .. }) => llm_class(cause),
            Error::Harness(HarnessError::Spec(_)) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}

fn llm_class(e: &LlmError) -> ErrorClass {
    match e {
        LlmError::EmptyPrompt => ErrorClass::Data,
        _ => ErrorClass::External,
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
