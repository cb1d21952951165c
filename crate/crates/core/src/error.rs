use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky factorization failed at every jitter level in the ladder.
    #[error("numerical conditioning failure (jitter levels tried: {attempted:?})")]
    Conditioning { attempted: Vec<f64> },

    #[error(
        "dynamics solve did not converge after {iterations} iterations (residual {residual:e})"
    )]
    DynamicsSolve { iterations: usize, residual: f64 },

    #[error("simulation failed at step {step}: {source}")]
    SimulationStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// A stability-analysis quantity left its admissible range.
    #[error("infeasible: {term} ({detail})")]
    Infeasible { term: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("singular matrix: {0}")]
    Singular(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
