use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numerical,
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    Input(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("duplicate observation for household {household} in wave {wave}")]
    DuplicateObservation { household: String, wave: i32 },
    #[error("nonpositive full income")]
    NonpositiveIncome,
    #[error("rank deficient design: {} collinear with preceding columns", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("degenerate restriction covariance")]
    DegenerateRestriction,
    #[error("too many bootstrap redraws: {redraws} for {replications} replications")]
    TooManyRedraws { redraws: usize, replications: usize },
    #[error("scenario too close to corners: {rejected} of {attempts} draws rejected")]
    CornerRejection { rejected: usize, attempts: usize },
    #[error("uninformative point: the Pareto weight does not respond to the second factor")]
    UninformativePoint,
    #[error("degenerate fraction distribution")]
    DegenerateFractions,
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Input(_)
            | Error::Csv(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::DuplicateObservation { .. } => ErrorKind::Input,
            Error::Config(_) | Error::InvalidArgument(_) => ErrorKind::Config,
            _ => ErrorKind::Numerical,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
