use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("covariance of phase {phase} is not positive definite")]
    NotPositiveDefinite { phase: usize },

    #[error("weighted least-squares system for phase {phase} is singular")]
    SingularSystem { phase: usize },

    #[error("logistic regression for {target} diverged (non-finite loss); use a smaller step size")]
    Divergence { target: String },

    #[error("cannot form {requested} clusters from {distinct} distinct feature vectors")]
    TooFewDistinct { requested: usize, distinct: usize },

    #[error("EM iteration {iteration}: {source}")]
    Em {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("contact penetration {penetration:.4e} m exceeds the limit of {limit:.4e} m")]
    Instability { penetration: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::Em {
            iteration,
            source: Box::new(self),
        }
    }
}
