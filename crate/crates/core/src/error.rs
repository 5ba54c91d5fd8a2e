use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("weight floor theta={theta} is infeasible for {n} agents (need 0 < theta <= 1/N)")]
    InfeasibleTheta { theta: f64, n: usize },

    #[error("connectivity window must be at least 1, got {0}")]
    InvalidWindow(usize),

    #[error("invalid agent count {0}: need at least 2 agents")]
    InvalidAgentCount(usize),

    #[error("transition product requires t >= s - 1, got t={t}, s={s}")]
    IndexOrder { t: usize, s: usize },

    #[error("point outside the domain of {what}: {detail}")]
    DomainViolation { what: &'static str, detail: String },

    #[error("inner solver did not reach tolerance {tol:e} in {iters} iterations (residual {residual:e})")]
    InnerSolverFailure { iters: usize, residual: f64, tol: f64 },

    #[error("agent {agent} failed at step {t}: {source}")]
    Step {
        agent: usize,
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reference solve unverified: {0}")]
    ReferenceSolveUnverified(String),

    #[error("exponent combination excluded: {0}")]
    ExcludedExponent(String),

    #[error("degenerate rate fit: {0}")]
    DegenerateFit(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("invalid configuration key `{key}`: {message}")]
    InvalidConfig { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_step(self, agent: usize, t: usize) -> Self {
        Error::Step {
            agent,
            t,
            source: Box::new(self),
        }
    }
}
