use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("rank-deficient system{}: numerical rank {rank} < {cols} columns", block_suffix(.block))]
    RankDeficient {
        rank: usize,
        cols: usize,
        block: Option<String>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient samples for {context}: need at least {required}, have {available}")]
    InsufficientSamples {
        context: String,
        required: usize,
        available: usize,
    },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("missing parameter `{param}` for system `{system}`")]
    MissingParameter { system: String, param: String },

    #[error("decomposition invariant violated: {what} = {value:e} exceeds {tolerance:e}")]
    Decomposition {
        what: String,
        value: f64,
        tolerance: f64,
    },

    #[error("malformed dictionary spec: {0}")]
    MalformedSpec(String),

    #[error("dictionary precondition failed: {0}")]
    DictionaryPrecondition(String),

    #[error("model is not state-inclusive; raw state cannot be read from the lifted vector")]
    NotStateInclusive,

    #[error("operation requires a {expected} model or system, got {actual}")]
    TimeKindMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("input rate samples are required when inputs vary")]
    MissingInputRate,

    #[error("hypothesis `{hypothesis}` violated: max {value:e} exceeds {tolerance:e}")]
    Hypothesis {
        hypothesis: String,
        value: f64,
        tolerance: f64,
    },

    #[error("condition not applicable: {0}")]
    Inapplicable(String),

    #[error("empty region or grid: {0}")]
    Empty(String),

    #[error("sample generation failed after {retries} retries: {reason}")]
    RetriesExhausted { retries: usize, reason: String },

    #[error("serialization error: {0}")]
    Serialization(String),
}

fn block_suffix(block: &Option<String>) -> String {
    match block {
        Some(b) => format!(" in block {b}"),
        None => String::new(),
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub(crate) fn check_dim(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}
