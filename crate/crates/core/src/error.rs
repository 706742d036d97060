use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("ellipticity violated: lambda = {value} at face {face} of dimension {dim}")]
    Ellipticity { dim: usize, face: usize, value: f64 },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system: zero pivot in column {column}")]
    SingularSystem { column: usize },

    #[error("iterative solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("step restriction violated: {0}")]
    StepRestrictionViolated(String),

    #[error("state diverged at step {step}")]
    Diverged { step: usize },

    #[error("scalar Newton solve failed for right-hand side {value}")]
    NewtonFailed { value: f64 },

    #[error("dense reference limited to 4096 nodes, got {nodes}")]
    TooLargeForDense { nodes: usize },

    #[error("reference accuracy estimate {estimate:e} exceeds required {required:e}")]
    AccuracyNotReached { estimate: f64, required: f64 },

    #[error("degenerate error sequence: {0}")]
    DegenerateErrors(String),

    #[error("config parse error at `{key}`: {message}")]
    Parse { key: String, message: String },

    #[error("invalid config value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(key: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.to_string(),
            message: message.into(),
        }
    }
}
