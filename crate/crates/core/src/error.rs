use alloc::boxed::Box;
use alloc::string::{String, ToString};

/// Errors raised by the core algorithms.
///
/// The variants map one-to-one onto the failure families the command line
/// reports with distinct exit codes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or input that violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),
    /// Tensor or vector shapes that disagree.
    #[error("shape error: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    /// Diffusion step index outside `1..=T`.
    #[error("step index {t} out of range 1..={max}")]
    StepIndex { t: usize, max: usize },
    /// Non-finite value encountered during a numeric routine.
    #[error("numeric error at step {step}: {what}")]
    Numeric { step: usize, what: String },
    /// Loss became non-finite while training.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    /// Two models or configs that must agree do not.
    #[error("config error: {0}")]
    Config(String),
    /// Feature vectors whose names or lengths do not line up.
    #[error("alignment error: {0}")]
    Alignment(String),
    /// A texture matrix had no entries to normalize.
    #[error("empty matrix: {0}")]
    EmptyMatrix(String),
    /// A feature class extractor failed; wraps the class name.
    #[error("{class} extraction failed: {source}")]
    Extraction {
        class: &'static str,
        source: Box<Error>,
    },
    /// Stored parameters disagree with their recorded checksum.
    #[error("integrity error: {0}")]
    Integrity(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
