use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("{op} requires a non-empty input")]
    Empty { op: &'static str },
    #[error("log of non-positive value {value} at index {index}")]
    NonPositiveLog { index: usize, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no foreground pixel above threshold {threshold}")]
    NoForeground { threshold: u8 },
    #[error("degenerate class counts: {positives} positives out of {total}")]
    DegenerateClasses { positives: usize, total: usize },
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}
