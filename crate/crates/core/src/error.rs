use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Each variant maps onto a stable machine-readable [`code`](Error::code) and an
/// HTTP status, so the CLI and the HTTP layer speak the same vocabulary.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("schema violation in {file} line {line}: {message}")]
    SchemaViolation {
        file: String,
        line: usize,
        message: String,
    },
    #[error("referential integrity: {0}")]
    ReferentialIntegrity(String),
    #[error("embedding shape mismatch: {0}")]
    EmbeddingShapeMismatch(String),
    #[error("{what} {id} not found")]
    NotFound { what: &'static str, id: String },
    #[error("row {index} out of range for matrix with {rows} rows")]
    OutOfRange { index: usize, rows: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("need at least {needed} models, got {got}")]
    TooFewModels { needed: usize, got: usize },
    #[error("non-finite input value")]
    NonFiniteInput,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("perplexity {perplexity} must be below (n-1)/3 = {limit}")]
    PerplexityTooLarge { perplexity: f64, limit: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("k = {k} must satisfy 1 <= k < n/2 (n = {n})")]
    BadK { k: usize, n: usize },
    #[error("layout for prompt {0} has not been computed")]
    LayoutMissing(u32),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("model {0} is not visible in this gallery")]
    ModelNotVisible(u32),
    #[error("no candidates: selection and pre-rank are both empty")]
    EmptySelectionAndCatalog,
    #[error("min_pool must be at least 2, got {0}")]
    BadMinPool(usize),
    #[error("model {0} is not in the current pair")]
    NotInPair(u32),
    #[error("session is finished")]
    SessionFinished,
    #[error("session is still active")]
    SessionActive,
    #[error("operation requires {expected} mode")]
    WrongMode { expected: &'static str },
    #[error("submitted order is not a permutation of the batch")]
    NotAPermutation,
    #[error("batch {0} already submitted")]
    AlreadySubmitted(usize),
    #[error("stale round: expected {expected}, got {got}")]
    StaleRound { expected: usize, got: usize },
    #[error("unknown {what} id {id}")]
    UnknownId { what: &'static str, id: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("bad model file: {0}")]
    BadModelFile(String),
    #[error("corrupt event log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn not_found(what: &'static str, id: impl ToString) -> Self {
        Error::NotFound {
            what,
            id: id.to_string(),
        }
    }

    pub fn unknown_id(what: &'static str, id: impl ToString) -> Self {
        Error::UnknownId {
            what,
            id: id.to_string(),
        }
    }

    /// Stable snake_case code shared by the CLI and the HTTP API.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MissingFile(_) => "missing_file",
            Error::SchemaViolation { .. } => "schema_violation",
            Error::ReferentialIntegrity(_) => "referential_integrity",
            Error::EmbeddingShapeMismatch(_) => "embedding_shape_mismatch",
            Error::NotFound { what: "prompt", .. } => "prompt_not_found",
            Error::NotFound { what: "model", .. } => "model_not_found",
            Error::NotFound { what: "session", .. } => "session_not_found",
            Error::NotFound { .. } => "not_found",
            Error::OutOfRange { .. } => "out_of_range",
            Error::ZeroVector => "zero_vector",
            Error::DimMismatch(..) => "dim_mismatch",
            Error::TooFewModels { .. } => "too_few_models",
            Error::NonFiniteInput => "non_finite_input",
            Error::TooFewPoints { .. } => "too_few_points",
            Error::PerplexityTooLarge { .. } => "perplexity_too_large",
            Error::InvalidParam(_) => "invalid_param",
            Error::BadK { .. } => "bad_k",
            Error::LayoutMissing(_) => "layout_missing",
            Error::UnknownSession(_) => "unknown_session",
            Error::ModelNotVisible(_) => "model_not_visible",
            Error::EmptySelectionAndCatalog => "empty_selection_and_catalog",
            Error::BadMinPool(_) => "bad_min_pool",
            Error::NotInPair(_) => "not_in_pair",
            Error::SessionFinished => "session_finished",
            Error::SessionActive => "session_active",
            Error::WrongMode { .. } => "wrong_mode",
            Error::NotAPermutation => "not_a_permutation",
            Error::AlreadySubmitted(_) => "already_submitted",
            Error::StaleRound { .. } => "stale_round",
            Error::UnknownId { .. } => "unknown_id",
            Error::EmptyDataset => "empty_dataset",
            Error::BadModelFile(_) => "bad_model_file",
            Error::CorruptLog { .. } => "corrupt_log",
            Error::BadRequest(_) => "bad_request",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }

    /// HTTP status used when the error crosses the API boundary.
    pub fn http_status(&self) -> u16 {
        match self {
            Error::NotFound { .. } | Error::UnknownSession(_) | Error::UnknownId { .. } => 404,
            Error::LayoutMissing(_)
            | Error::SessionFinished
            | Error::SessionActive
            | Error::WrongMode { .. }
            | Error::AlreadySubmitted(_)
            | Error::StaleRound { .. } => 409,
            Error::MissingFile(_)
            | Error::SchemaViolation { .. }
            | Error::ReferentialIntegrity(_)
            | Error::EmbeddingShapeMismatch(_)
            | Error::BadModelFile(_)
            | Error::CorruptLog { .. }
            | Error::Io(_) => 500,
            _ => 400,
        }
    }
}
