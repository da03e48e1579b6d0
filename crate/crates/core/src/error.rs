use thiserror::Error;

/// Unified error type. The CLI maps variants to exit codes: config/argument
/// problems exit 1, solver failures exit 2, verification failures exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed an out-of-range or inconsistent argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Geometry cannot be built as requested.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Config file rejected; `line` is 1-based, 0 when not tied to a line.
    #[error("config error (line {line}): {message}")]
    Config { line: usize, message: String },

    /// Material data violates a structural invariant.
    #[error("material validation: {0}")]
    Validation(String),

    /// Linear solver broke down or stagnated; residuals are relative.
    #[error("solver failure in {context}: residual {residual:.3e} after {iterations} iterations (tolerance {tolerance:.1e})")]
    Solver {
        context: String,
        residual: f64,
        iterations: usize,
        tolerance: f64,
    },

    /// A requested resolved solve exceeds the configured DOF budget.
    #[error("DOF budget exceeded: problem needs {required} DOFs, budget is {budget}")]
    Budget { required: usize, budget: usize },

    /// A verification check failed (used by the verify subcommand).
    #[error("verification failure: {0}")]
    Verification(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn geometry(msg: impl Into<String>) -> Self {
        Error::Geometry(msg.into())
    }

    pub fn config(line: usize, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: msg.into(),
        }
    }
}
