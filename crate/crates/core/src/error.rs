use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("transition row P(.|s={s},a={a},b={b}) sums to {sum}, expected 1")]
    Stochasticity { s: usize, a: usize, b: usize, sum: f64 },

    #[error("negative transition probability at P(s'={next}|s={s},a={a},b={b}) = {value}")]
    NegativeProbability {
        s: usize,
        a: usize,
        b: usize,
        next: usize,
        value: f64,
    },

    #[error("missing field `{0}`")]
    MissingField(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("log of zero probability: {player} policy has a zero entry at state {state} while tau > 0")]
    LogOfZero { player: &'static str, state: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("stage game at state {state} failed: {source}")]
    StageGame {
        state: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("action count {actions} exceeds the support-enumeration cap of {cap}")]
    EnumerationCap { actions: usize, cap: usize },

    #[error("iterates diverged at iteration {0}")]
    Diverged(usize),

    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
