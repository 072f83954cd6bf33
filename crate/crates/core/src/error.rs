use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A closed-form solve hit a singular (or numerically singular) system.
    /// Callers holding a convex objective should route to `convex_min`.
    #[error("singular system: {0}; use the iterative convex minimizer instead")]
    Singular(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("minimizer did not converge after {steps} steps (gradient norm {gradient_norm:e})")]
    NotConverged { steps: usize, gradient_norm: f64 },

    #[error("wealth {wealth} is outside the utility domain (a + b x must be positive)")]
    UtilityDomain { wealth: f64 },

    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("progressive hedging diverged at iteration {iteration} (stopping metric {metric:e})")]
    Diverged { iteration: usize, metric: f64 },
}

impl Error {
    pub(crate) fn in_scenario(self, scenario: usize) -> Error {
        Error::Scenario {
            scenario,
            source: Box::new(self),
        }
    }

    /// Strips scenario wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Scenario { source, .. } => source.root(),
            other => other,
        }
    }
}
