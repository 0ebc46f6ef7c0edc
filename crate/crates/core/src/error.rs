use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A point lies outside the open domain of barrier term `term`.
    #[error("point is not strictly interior to barrier term {term}")]
    DomainViolation { term: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid barrier term: {0}")]
    InvalidTerm(String),

    #[error("barrier Hessian is numerically singular")]
    SingularHessian,

    #[error("KKT matrix is singular (smallest pivot {pivot:e}, pivot ratio {condition:e})")]
    SingularKkt { pivot: f64, condition: f64 },

    #[error("equality matrix is rank deficient: rank {rank} < {rows} rows")]
    RankDeficient { rank: usize, rows: usize },

    #[error("no strictly interior equality-feasible point was found")]
    InfeasibleStart,

    #[error("instance is infeasible")]
    InfeasibleInstance,

    #[error("no convergence after {iterations} Newton iterations")]
    NonConvergent { iterations: usize },

    #[error("round {round}: drift {drift:e} exceeds threshold {threshold:e}")]
    DriftTooLarge {
        round: usize,
        drift: f64,
        threshold: f64,
    },

    #[error("round {round}: no oracle optimum available")]
    MissingOracle { round: usize },

    #[error("network is disconnected")]
    DisconnectedNetwork,

    #[error("invalid network case: {0}")]
    InvalidCase(String),

    #[error("round {round}: load stream stayed infeasible after {redraws} redraws")]
    PersistentInfeasibility { round: usize, redraws: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_round(self, round: usize) -> Self {
        match self {
            e @ Error::AtRound { .. } => e,
            e => Error::AtRound {
                round,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) | Error::Json(_) | Error::InvalidCase(_) | Error::InvalidTerm(_) => {
                true
            }
            Error::AtRound { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
