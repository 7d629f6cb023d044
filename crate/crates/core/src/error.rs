use std::fmt;
use std::path::PathBuf;

/// Where a degenerate (near-zero) norm was encountered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormSite {
    Vector,
    LabelRow(usize),
    Instance(usize),
    Token(usize),
    HeadSlice { head: usize, row: usize },
    LabelHeadSlice { head: usize, class: usize },
}

impl fmt::Display for NormSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormSite::Vector => write!(f, "vector"),
            NormSite::LabelRow(c) => write!(f, "label row {c}"),
            NormSite::Instance(i) => write!(f, "instance {i}"),
            NormSite::Token(j) => write!(f, "token position {j}"),
            NormSite::HeadSlice { head, row } => write!(f, "head {head}, instance row {row}"),
            NormSite::LabelHeadSlice { head, class } => write!(f, "head {head}, label row {class}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("near-zero norm at {0}")]
    NearZeroNorm(NormSite),
    #[error("empty input")]
    EmptyInput,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("Jacobi iteration did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite function evaluation at coordinate {0}")]
    NonFiniteEvaluation(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("unknown token id {id} (vocabulary size {vocab})")]
    UnknownToken { id: usize, vocab: usize },
    #[error("label regularizer needs at least two classes")]
    SingleClass,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid synthetic corpus spec: {0}")]
    SpecInvalid(String),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing field \"{field}\"")]
    MissingField { line: usize, field: String },
    #[error("line {line}: label \"{label}\" not in label vocabulary")]
    UnknownLabel { line: usize, label: String },
    #[error("example {0} has no tokens")]
    EmptyText(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("duplicate label \"{0}\" in label vocabulary")]
    DuplicateLabel(String),
    #[error("class \"{class}\" has {have} examples, {need} needed")]
    InsufficientClassCount { class: String, have: usize, need: usize },
    #[error("expected a binary dataset, found {0} classes")]
    NotBinary(usize),
    #[error("length mismatch: {0} gold labels vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),
    #[error("training failed at epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
