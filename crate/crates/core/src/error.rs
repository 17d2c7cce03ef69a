use thiserror::Error;

/// Errors raised while loading or validating inputs.
#[derive(Debug, Error)]
pub enum InputError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("not radial: {0}")]
    NotRadial(String),
}

impl InputError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        InputError::Invalid(msg.into())
    }
}

/// Failures of the exact power-flow solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("backward/forward sweep did not converge after {iterations} iterations (last max |dv| = {last_step:.3e})")]
    NotConverged { iterations: usize, last_step: f64 },
    #[error("no physical voltage solution (discriminant {discriminant:.6e})")]
    NoSolution { discriminant: f64 },
    #[error("non-finite injection at node {0}")]
    NonFinite(usize),
}

/// Errors from the convex-program layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown variable index {0}")]
    UnknownVariable(usize),
    #[error("solver backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("invalid program: {0}")]
    Invalid(String),
}

/// Errors raised by the market pipeline.
#[derive(Debug, Error)]
pub enum MarketError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error("operating point: {0}")]
    PowerFlow(#[from] PowerFlowError),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error("solver returned {status} for {problem}")]
    Solver { problem: String, status: String },
    #[error("background demand alone violates network limits under the inner approximation ({0})")]
    BackgroundInfeasible(String),
}
