use thiserror::Error;

#[derive(Debug, Error)]
pub enum FmmError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("duplicate timestamp {time} (rows {first} and {second})")]
    DuplicateTime { time: f64, first: usize, second: usize },
    #[error("track has {0} records, at least 3 are required")]
    TooFewRecords(usize),
    #[error("all positions are identical; pooled standard deviation is zero")]
    ZeroVariance,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("time {time} lies outside the warp grid [{lo}, {hi}]")]
    WarpRange { time: f64, lo: f64, hi: f64 },
    #[error("matrix factorization failed after jitter escalation to {jitter:e}: {context}")]
    Factorization { context: String, jitter: f64 },
    #[error("memory budget exceeded: need {needed} bytes, cap is {cap} bytes")]
    MemoryBudget { needed: usize, cap: usize },
    #[error("chain for {0} rejected every proposal after adaptation")]
    StuckChain(String),
    #[error("model averaging: {0}")]
    Averaging(String),
    #[error("no candidate warp fields were accepted")]
    EmptyCandidateSet,
    #[error("unknown identifier: {0}")]
    Unknown(String),
}

pub type Result<T> = std::result::Result<T, FmmError>;

impl FmmError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        FmmError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
