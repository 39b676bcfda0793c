use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed or inconsistent input (exit code 2).
    Input,
    /// A utility precondition was not met and `force` was not set (exit code 3).
    Precondition,
    /// A configured size cap was exceeded (exit code 4).
    Resource,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Input => 2,
            ErrorKind::Precondition => 3,
            ErrorKind::Resource => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("tree has no root")]
    NoRoot,
    #[error("tree has more than one root: {0:?}")]
    MultipleRoots(Vec<String>),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}` names unknown parent `{parent}`")]
    UnknownParent { node: String, parent: String },
    #[error("parent links form a cycle through `{0}`")]
    Cycle(String),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("`{0}` is not a leaf")]
    NotALeaf(String),
    #[error("negative count {value} for leaf `{leaf}`")]
    NegativeCount { leaf: String, value: i64 },
    #[error("count for leaf `{0}` would drop below zero")]
    CountUnderflow(String),
    #[error("subtree sum overflowed 64 bits at node `{0}`")]
    Overflow(String),
    #[error("depth {depth} outside 1..={max}")]
    DepthOutOfRange { depth: usize, max: usize },
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("sparse vector stream of length {0} is exhausted")]
    StreamExhausted(usize),
    #[error("node `{0}` appears in more than one tree of the forest")]
    OverlappingForest(String),
    #[error("no estimate supplied for node `{0}`")]
    MissingEstimate(String),
    #[error("node `{0}` does not have exactly two children")]
    NotBinary(String),
    #[error("{what}: threshold {actual} is below the required minimum {required}")]
    Precondition {
        what: &'static str,
        required: f64,
        actual: f64,
    },
    #[error("schedule violates constraint ({equation}) at level {level}: {detail}")]
    Schedule {
        equation: u8,
        level: usize,
        detail: String,
    },
    #[error("{what} requires {requested} which exceeds the cap of {cap}")]
    ResourceCap {
        what: &'static str,
        requested: u128,
        cap: u128,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Precondition { .. } | Error::Schedule { .. } => ErrorKind::Precondition,
            Error::ResourceCap { .. } => ErrorKind::Resource,
            _ => ErrorKind::Input,
        }
    }

    /// Stable short code, distinct per variant, printed by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NoRoot => "no-root",
            Error::MultipleRoots(_) => "multiple-roots",
            Error::DuplicateNode(_) => "duplicate-id",
            Error::UnknownParent { .. } => "unknown-parent",
            Error::Cycle(_) => "cycle",
            Error::Malformed { .. } => "malformed-line",
            Error::UnknownNode(_) => "unknown-node",
            Error::NotALeaf(_) => "not-a-leaf",
            Error::NegativeCount { .. } => "negative-count",
            Error::CountUnderflow(_) => "count-underflow",
            Error::Overflow(_) => "overflow",
            Error::DepthOutOfRange { .. } => "depth-out-of-range",
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::Empty(_) => "empty",
            Error::StreamExhausted(_) => "stream-exhausted",
            Error::OverlappingForest(_) => "overlapping-forest",
            Error::MissingEstimate(_) => "missing-estimate",
            Error::NotBinary(_) => "not-binary",
            Error::Precondition { .. } => "precondition",
            Error::Schedule { .. } => "schedule",
            Error::ResourceCap { .. } => "resource-cap",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
        }
    }

    pub fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}

/// Positive and finite.
pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, value, "must be positive and finite"))
    }
}

/// Strictly inside (0, 1).
pub(crate) fn check_unit_open(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, value, "must lie strictly between 0 and 1"))
    }
}
