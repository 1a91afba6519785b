use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("invalid video: {0}")]
    InvalidVideo(String),

    #[error("need at least two frames")]
    NeedTwoFrames,

    #[error("field is {h}x{w}; edge map needs at least 3x3")]
    FieldTooSmall { h: usize, w: usize },

    #[error("video has {frames} frames, fewer than one {window}-frame window")]
    NoFullWindow { frames: usize, window: usize },

    #[error("resolution {actual} too small to render sprites; minimum is {minimum}")]
    ResolutionTooSmall { actual: usize, minimum: usize },

    #[error("crop size {crop} larger than input {height}x{width}")]
    CropTooLarge {
        crop: usize,
        height: usize,
        width: usize,
    },

    #[error("group size {group} does not divide clip length {frames}")]
    GroupDivisibility { group: usize, frames: usize },

    #[error("requested {requested} negative permutations but only {available} non-identity permutations exist")]
    TooManyPermutations { requested: usize, available: u128 },

    #[error("at least one negative required")]
    NoNegatives,

    #[error("degenerate pre-norm embedding")]
    DegenerateEmbedding,

    #[error("bank must be warmed before visual loss")]
    EmptyBank,

    #[error("key {index} has norm {norm}, expected unit norm")]
    NonUnitKey { index: usize, norm: f64 },

    #[error("non-finite activations in {stage}")]
    NonFinite { stage: String },

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("class {class} has no samples in the training split")]
    MissingClass { class: usize },

    #[error("fraction {fraction} is too small to keep one sample per class")]
    FractionTooSmall { fraction: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::DegenerateEmbedding
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
