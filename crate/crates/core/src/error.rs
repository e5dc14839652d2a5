use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} is not Hermitian (deviation {deviation:.3e})")]
    NotHermitian { what: String, deviation: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("negative evolution time {0}")]
    NegativeTime(f64),

    #[error("steady state is ambiguous: {count} eigenvalues with modulus below {threshold:e}")]
    AmbiguousSteadyState { count: usize, threshold: f64 },

    #[error("no steady state found: {0}")]
    NoSteadyState(String),

    #[error("unknown channel '{0}'")]
    UnknownChannel(String),

    #[error("unknown parameter '{0}'")]
    UnknownParameter(String),

    #[error("efficiency {0} outside [0, 1]")]
    InvalidEfficiency(f64),

    #[error("invalid parameter value: {0}")]
    InvalidParameter(String),

    #[error("no-jump generator is singular: the model has a dark subspace")]
    DarkSubspace,

    #[error("model is not renewal: {0}")]
    NotRenewal(String),

    #[error("waiting time distribution is not normalizable: {0}")]
    Unnormalizable(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("infinite Fisher information: {0}")]
    InfiniteInformation(String),

    #[error("waiting-time table too short: {0}")]
    TableOverflow(String),

    #[error("all monitored jump weights vanish (numerically dark state)")]
    NumericallyDark,

    #[error("normalization underflow ({0:e})")]
    Underflow(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Exit-code class used by the command-line driver.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::UnknownChannel(_)
                | Error::UnknownParameter(_)
                | Error::InvalidParameter(_)
                | Error::InvalidEfficiency(_)
        )
    }
}
