use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("series is already at {0}-second epochs")]
    AlreadyAggregated(u32),

    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("cosinor fit is not identifiable (flat or near-constant input)")]
    NonIdentifiable,

    #[error("flat fitted curve, cannot dichotomize")]
    FlatCurve,

    #[error("need at least two rough cycle boundaries, found {0}")]
    TooFewBoundaries(usize),

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
