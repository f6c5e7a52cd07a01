use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("split `{split}` is empty")]
    EmptySplit { split: String },

    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cannot encode empty text")]
    EmptyText,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index parse error at byte {offset}: {message}")]
    IndexParse { offset: usize, message: String },

    #[error("unsupported index version {found} (expected {expected})")]
    IndexVersion { found: u32, expected: u32 },

    #[error("index was built with encoder `{index}` but `{configured}` is configured")]
    EncoderMismatch { index: String, configured: String },

    #[error("index holds {actual} nodes but {expected} nodes are required")]
    IndexKind { expected: String, actual: String },

    #[error("prompt budget of {budget} characters cannot fit the {needed}-character prompt")]
    BudgetTooSmall { budget: usize, needed: usize },

    #[error("invalid prompt template: {0}")]
    Template(String),

    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("api error (status {status}): {body}")]
    Api { status: u16, body: String },

    #[error("invalid response: {0}")]
    InvalidResponse(String),

    #[error("misaligned inputs: {predictions} predictions vs {gold} gold records")]
    Misaligned { predictions: usize, gold: usize },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable kind, used by the CLI error record and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedRecord { .. } => "malformed_record",
            Error::EmptySplit { .. } => "empty_split",
            Error::Manifest { .. } => "manifest",
            Error::EmptyKnowledgeBase => "empty_knowledge_base",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::EmptyText => "empty_text",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::IndexParse { .. } => "index_parse",
            Error::IndexVersion { .. } => "index_version",
            Error::EncoderMismatch { .. } => "encoder_mismatch",
            Error::IndexKind { .. } => "index_kind",
            Error::BudgetTooSmall { .. } => "budget_too_small",
            Error::Template(_) => "template",
            Error::Transport { .. } => "transport",
            Error::Api { .. } => "api",
            Error::InvalidResponse(_) => "invalid_response",
            Error::Misaligned { .. } => "misaligned",
            Error::Fit(_) => "fit",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    /// Whether retrying the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            Error::Transport { .. } => true,
            Error::Api { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}
