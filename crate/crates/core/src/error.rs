use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error for record {record}: {message}")]
    Validation { record: String, message: String },

    #[error("unknown label {label:?} for schema {schema}")]
    UnknownLabel { label: String, schema: String },

    #[error("prompt grammar can produce only {capacity} distinct prompts, {requested} requested")]
    PromptCapacity { capacity: usize, requested: usize },

    #[error("unknown prompt id {0}")]
    UnknownPrompt(String),

    #[error("prompt {0} has no generation left to attribute an outcome to")]
    OutcomeWithoutGeneration(String),

    #[error("prompt pool is empty")]
    EmptyPool,

    #[error("unknown image id {0}")]
    UnknownImage(String),

    #[error("image {0} is a manual record and cannot be reviewed")]
    ManualImage(String),

    #[error("conflicting verdict for image {image}: already {existing}")]
    ConflictingVerdict { image: String, existing: String },

    #[error("class {label} is empty")]
    EmptyClass { label: String },

    #[error("insufficient images: {0}")]
    Insufficient(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("{failed} of {total} generation requests failed: {}", .errors.join("; "))]
    Batch {
        failed: usize,
        total: usize,
        errors: Vec<String>,
    },

    #[error("image error: {0}")]
    Image(String),

    #[error("schema mismatch: model uses {model}, data uses {data}")]
    SchemaMismatch { model: String, data: String },

    #[error("worker error: {0}")]
    Worker(String),

    #[error("prediction file error at row {row}: {message}")]
    Predictions { row: usize, message: String },

    #[error("degenerate ROC: {0}")]
    DegenerateRoc(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("service error: {0}")]
    Service(String),
}

impl Error {
    /// Usage and configuration problems, as opposed to runtime failures.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Invalid(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }
}
