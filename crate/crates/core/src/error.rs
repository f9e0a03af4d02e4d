use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid item parameters: {0}")]
    InvalidParams(String),

    #[error("invalid theta grid: {0}")]
    InvalidGrid(String),

    #[error("information mass {mass:e} is below the degeneracy threshold")]
    DegenerateInformation { mass: f64 },

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("posterior mass underflowed to zero")]
    DegeneratePosterior,

    #[error("invalid gamma shape for base {base} and gamma {gamma}")]
    InvalidShape { base: f64, gamma: f64 },

    #[error("invalid selector configuration: {0}")]
    InvalidConfig(String),

    #[error("no eligible items")]
    EmptyBank,

    #[error("invalid probability surface for item {item_id}: {reason}")]
    InvalidSurface { item_id: String, reason: String },

    #[error("duplicate item id {0}")]
    DuplicateItem(String),

    #[error("missing score for item type {0}")]
    MissingScore(String),

    #[error("unknown item type {0}")]
    UnknownItemType(String),

    #[error("unknown item {0}")]
    UnknownItem(String),

    #[error("session already finished")]
    SessionFinished,

    #[error("no eligible item left for item type {0}")]
    BankExhausted(String),

    #[error("grade submitted for {got} but pending item is {expected:?}")]
    UnexpectedItem {
        expected: Option<String>,
        got: String,
    },

    #[error("stage {0} is not complete")]
    StageIncomplete(String),

    #[error("no historical session was administered item {0}")]
    NoDonor(String),

    #[error("empty history")]
    EmptyHistory,

    #[error("report has no administration events")]
    EmptyReport,

    #[error("degenerate variance in correlation input")]
    DegenerateVariance,

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("exposure target {target} unreachable (best {best} at gamma {gamma})")]
    TargetUnreachable { target: f64, best: f64, gamma: f64 },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Malformed(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
