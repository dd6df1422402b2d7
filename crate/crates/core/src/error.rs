use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("node {node}: {msg}")]
    Graph { node: usize, msg: String },

    #[error("{0}: non-finite value")]
    NonFinite(&'static str),

    #[error("{op} did not converge after {sweeps} sweeps")]
    NoConvergence { op: &'static str, sweeps: usize },

    #[error("matrix is not symmetric (max asymmetry {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("eigenvalue {index} = {value:e} is not above floor {eps:e}; increase the covariance regularizer")]
    EigenvalueTooSmall { index: usize, value: f64, eps: f64 },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("step {step}: non-finite loss")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
