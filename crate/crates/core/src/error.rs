use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` is missing from the input header")]
    MissingColumn(String),
    #[error("column `{name}` has a missing value at row {row}")]
    NaNInRetainedColumn { name: String, row: usize },
    #[error("time column spacing at row {row} is {spacing} s, expected {expected} s")]
    NonUniformTimestamps { row: usize, spacing: f64, expected: f64 },
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("duplicate channel `{0}`")]
    DuplicateChannel(String),
    #[error("channel `{0}` has no valid anchor for imputation")]
    AllSentinel(String),
    #[error("feature elimination would remove the last remaining feature")]
    EmptySurvivorSet,
    #[error("empty sample")]
    EmptySample,
    #[error("channel `{0}` is constant")]
    ConstantChannel(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("experiment `{0}` has fewer than two samples")]
    TooShort(String),
    #[error("{pairs} snapshot pairs cannot determine {unknowns} regressors")]
    InsufficientPairs { pairs: usize, unknowns: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported model file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error("actual series is constant, R² is undefined")]
    ConstantActual,
    #[error("{available} experiments cannot support leave-{p}-out")]
    TooFewExperiments { available: usize, p: usize },
    #[error("envelope half-width for `{0}` is not positive")]
    DegenerateEnvelope(String),
    #[error("spectrogram needs at least two distinct pulse lengths, got {0}")]
    InsufficientPulseLengthDiversity(usize),
    #[error("spectrogram grids differ")]
    GridMismatch,
    #[error("line {line}: unsupported word `{token}`")]
    UnsupportedWord { line: usize, token: String },
    #[error("line {line}: malformed number `{token}`")]
    MalformedNumber { line: usize, token: String },
    #[error("command {0}: move without a positive feed")]
    ZeroFeedMove(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config(_) | UnknownChannel(_) | DuplicateChannel(_) | TooFewExperiments { .. } => {
                ErrorKind::Config
            }
            InsufficientPairs { .. }
            | DegenerateEnvelope(_)
            | ConstantActual
            | EmptySurvivorSet
            | InsufficientPulseLengthDiversity(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}
