use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
    #[error("scale error: {0}")]
    Scale(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("forecast failed: {0}")]
    Forecast(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("conflicting records: {}", .0.join("; "))]
    Conflict(Vec<String>),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical machinery itself, as opposed to bad
    /// inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular(_)
                | Error::Factorization(_)
                | Error::Optimization(_)
                | Error::Forecast(_)
                | Error::UndefinedStatistic(_)
        )
    }
}
