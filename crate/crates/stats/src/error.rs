use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("singular design matrix; collinear columns: {columns:?}")]
    SingularDesign { columns: Vec<String> },

    #[error("R-squared undefined: response has zero total sum of squares")]
    UndefinedR2,

    #[error("IRLS did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;
