use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("series too short: {len} samples for orders n={n}, m={m} (need more than {})", n + m + 1)]
    SeriesTooShort { len: usize, n: usize, m: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("rank-deficient regression: column {column} is linearly dependent on earlier columns")]
    RankDeficient { column: usize },
    #[error("insufficient history: need {needed} lagged values, have {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("state-space conversion needs an AR order of at least 1")]
    OrderZero,
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("invalid noise configuration: {0}")]
    InvalidNoise(String),
    #[error("innovation covariance {0} is not positive")]
    SingularInnovation(f64),
    #[error("confidence {0} outside the open interval (0, 1)")]
    BadConfidence(f64),
    #[error("degrees of freedom must be at least 1")]
    BadDof,
    #[error("sample t={t} for sensor '{sensor}' does not advance past t={last}")]
    OutOfOrder { sensor: String, t: u64, last: u64 },
    #[error("window of {count} residuals is smaller than the minimum {min}")]
    WindowTooSmall { count: usize, min: usize },
    #[error("baseline sigma must be positive")]
    ZeroBaseline,
    #[error("model is not stable; refusing to generate a divergent series")]
    UnstableModel,
    #[error("fault window [{start}, {end}) overlaps an existing fault")]
    OverlappingFault { start: usize, end: usize },
    #[error("fault window [{start}, {end}) lies outside the stream of {len} samples")]
    SpecOutOfRange { start: usize, end: usize, len: usize },
    #[error("invalid fault spec: {0}")]
    InvalidFault(String),
    #[error("cannot place {requested} non-overlapping fault windows in {len} samples")]
    Unsatisfiable { requested: usize, len: usize },
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown sensor '{0}'")]
    UnknownSensor(String),
    #[error("insufficient data: need {needed} samples, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: t does not increase for sensor '{sensor}'")]
    NonMonotoneT { line: u64, sensor: String },
    #[error("missing or invalid header: {0}")]
    MissingHeader(String),
    #[error("unsupported document version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("events and truth disagree on stream length ({events} vs {truth})")]
    LengthMismatch { events: u64, truth: u64 },
    #[error("event sink failed: {0}")]
    Sink(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
