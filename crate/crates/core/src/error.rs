use thiserror::Error;

/// Errors raised anywhere in the diagnostic pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("token id {id} out of vocabulary of size {vocab}")]
    IndexOutOfVocab { id: usize, vocab: usize },
    #[error("sequence of length {len} is shorter than window {window}")]
    SequenceTooShort { len: usize, window: usize },
    #[error("model dimension {dim} is not divisible by {heads} heads")]
    HeadMismatch { dim: usize, heads: usize },
    #[error("backward needs a scalar output, got {len} elements")]
    NotScalar { len: usize },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("instance has no tokens")]
    EmptyInstance,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("rationale mask has no positive tokens")]
    NoPositives,
    #[error("series is constant")]
    ConstantSeries,
    #[error("x values are not strictly ascending")]
    NotAscending,
    #[error("weighted design matrix is singular")]
    SingularFit,
    #[error("optimisation produced a non-finite loss")]
    NonFinite,
    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: rationale has {rationale} entries for {tokens} tokens")]
    LineLengthMismatch {
        line: usize,
        tokens: usize,
        rationale: usize,
    },
    #[error("line {line}: unknown label {label}")]
    UnknownLabel { line: usize, label: i64 },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios(Vec<f64>),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
