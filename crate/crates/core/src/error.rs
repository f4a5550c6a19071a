use thiserror::Error;

/// Errors raised by data ingestion, estimation and testing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("could not parse value {value:?} at data row {row}, column `{col}`")]
    Parse { row: usize, col: String, value: String },
    #[error("non-finite value at data row {row}, column `{col}`")]
    NonFiniteValue { row: usize, col: String },
    #[error("dataset has no rows")]
    EmptyData,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("degenerate support: lower and upper quantiles coincide at {0}")]
    DegenerateSupport(f64),
    #[error("rank-deficient design in {context} (smallest singular value {min_sv:.3e})")]
    RankDeficient { context: String, min_sv: f64 },
    #[error("singular GMM weight matrix")]
    SingularWeight,
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("{cells} distinct conditioning values exceed the cell-means limit of {limit}")]
    TooManyCells { cells: usize, limit: usize },
    #[error("no observation receives positive kernel weight at {at}")]
    EmptyWindow { at: f64 },
    #[error("every standard error sits at the variance floor")]
    DegenerateVariance,
    #[error("{draws} multiplier draws requested, at least {min} required")]
    SimulationBudgetTooSmall { draws: usize, min: usize },
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("point (x = {x}, p = {p}) lies outside the estimated support")]
    OffSupport { x: f64, p: f64 },
    #[error("propensity support [{lo:.3}, {hi:.3}] is partial; outcome bounds are required")]
    MissingBounds { lo: f64, hi: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
