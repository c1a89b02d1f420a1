use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("conditioning basis is rank deficient even after ridge fallback")]
    RankDeficientBasis,

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("column {column} has degenerate variance (< {threshold:e})")]
    DegenerateVariance { column: usize, threshold: f64 },

    #[error("treatment has a single level; both groups are required")]
    SingleGroup,

    #[error("proportion must lie strictly inside (0, 1), got {0}")]
    InvalidProportion(f64),

    #[error("empty list")]
    EmptyList,

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate projection at time point {time_point}: alpha' M alpha <= {threshold:e}")]
    DegenerateProjection { time_point: usize, threshold: f64 },

    #[error("weight vector is infeasible: {reason}")]
    InfeasibleWeights { reason: String },

    #[error("fitting score {score} failed: {source}")]
    ScoreFit {
        score: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("time point {time_point}: {source}")]
    AtTimePoint {
        time_point: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fold construction degenerate after {attempts} redraws: {reason}")]
    FoldDegeneracy { attempts: usize, reason: String },

    #[error("invalid simulation spec at `{field}`: {message}")]
    InvalidSpec { field: String, message: String },

    #[error("unknown preset `{0}`; expected `tads-like` or `catie-like`")]
    UnknownPreset(String),

    #[error("item index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("unrecognized column `{0}` in data header")]
    UnrecognizedColumn(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed CSV: {0}")]
    MalformedCsv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON (de)serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_time_point(self, time_point: usize) -> Self {
        Error::AtTimePoint {
            time_point,
            source: Box::new(self),
        }
    }

    pub(crate) fn for_score(self, score: usize) -> Self {
        Error::ScoreFit {
            score,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
