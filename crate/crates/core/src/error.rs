use std::path::PathBuf;

/// Errors produced anywhere in the curation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("record {image_id} has no score {key:?}")]
    MissingScore { image_id: String, key: String },

    #[error("no record for image {0}")]
    MissingRecord(String),

    #[error("no activations for image {0}")]
    MissingActivation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("image {image_id}: missing attention map for layer {layer}, token {token}")]
    MissingMap {
        image_id: String,
        layer: usize,
        token: usize,
    },

    #[error("image {image_id}: duplicate attention map for layer {layer}, token {token}")]
    DuplicateMap {
        image_id: String,
        layer: usize,
        token: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("K = {k} exceeds the {cells} available (layer, token) cells")]
    KTooLarge { k: usize, cells: usize },

    #[error("separation table has no top-K selection")]
    Unfitted,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("incomplete votes: {0}")]
    IncompleteVotes(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("matrix is not positive semi-definite: {0}")]
    NonPsd(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("bad response: {0}")]
    BadResponse(String),

    #[error("empty caption for image {0}")]
    EmptyCaption(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "ParseError",
            Error::Invariant(_) => "InvariantError",
            Error::Io { .. } => "IoError",
            Error::Config(_) => "ConfigError",
            Error::MissingScore { .. } => "MissingScoreError",
            Error::MissingRecord(_) => "MissingRecordError",
            Error::MissingActivation(_) => "MissingActivationError",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::MissingMap { .. } => "MissingMapError",
            Error::DuplicateMap { .. } => "DuplicateMapError",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::KTooLarge { .. } => "KTooLarge",
            Error::Unfitted => "UnfittedError",
            Error::Domain(_) => "DomainError",
            Error::IncompleteVotes(_) => "IncompleteVotesError",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::NonPsd(_) => "NonPsdError",
            Error::EmptyInput(_) => "EmptyInput",
            Error::Transport(_) => "TransportError",
            Error::BadResponse(_) => "BadResponseError",
            Error::EmptyCaption(_) => "EmptyCaptionError",
        }
    }

    /// Process exit code: 2 for usage/configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::KTooLarge { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
