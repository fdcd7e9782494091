use alloc::string::String;

/// Errors raised by the pure pipeline algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("unknown {kind} `{value}`")]
    UnknownName { kind: &'static str, value: String },
    #[error("record `{id}` violates manifest invariant: {reason}")]
    InvalidRecord { id: String, reason: &'static str },
    #[error("split ratios sum to {0}, expected 1")]
    RatiosNotNormalized(f64),
    #[error("split ratio out of [0, 1]: {0}")]
    RatioOutOfRange(f64),
    #[error("class `{0}` has no records")]
    EmptyClass(&'static str),
    #[error("record `{0}` is not an unassigned original")]
    NotUnassignedOriginal(String),
    #[error("class `{label}` count must be positive, got {count}")]
    ZeroClassCount { label: &'static str, count: usize },
    #[error("line {line}: {reason}")]
    MalformedAnnotation { line: usize, reason: String },
    #[error("line {line}: coordinate {value} outside [0, 1]")]
    CoordinateOutOfRange { line: usize, value: f64 },
    #[error("invalid bounding box: {0}")]
    InvalidBox(&'static str),
    #[error("degenerate pixel rectangle ({left}, {top}, {right}, {bottom})")]
    DegenerateRect { left: i64, top: i64, right: i64, bottom: i64 },
    #[error("invalid image: {0}")]
    InvalidImage(&'static str),
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(&'static str),
    #[error("length mismatch: {0} labels, {1} predictions, {2} scores")]
    LengthMismatch(usize, usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("k must be at least 2 and at most the number of source groups ({groups}), got {k}")]
    InvalidFoldCount { k: usize, groups: usize },
    #[error("augmented record `{0}` has no original source in the manifest")]
    OrphanAugmented(String),
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("target class {0} out of range")]
    TargetClassOutOfRange(usize),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
