use thiserror::Error;

pub type Result<T, E = DinaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DinaError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate Q-matrix: every row is all-zero, no item measures any attribute")]
    DegenerateMatrix,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("size limit exceeded: {what} = {value}, maximum is {max}")]
    TooLarge {
        what: &'static str,
        value: usize,
        max: usize,
    },

    #[error("posterior is degenerate: every attribute profile has zero weight")]
    DegeneratePosterior,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("Q-matrix is identifiable; no witness pair exists")]
    Identifiable,

    #[error(
        "Newton solver did not converge after {iterations} iterations (residual {residual:e})"
    )]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("perturbation {perturbation} leaves the open parameter region ({reason}); try a value closer to 1")]
    InfeasiblePerturbation { perturbation: f64, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl DinaError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        DinaError::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        DinaError::Io {
            context: context.into(),
            source,
        }
    }
}
