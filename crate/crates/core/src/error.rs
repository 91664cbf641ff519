use roadsafe_stats::StatsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error at line {line}: {message}")]
    Schema { line: u64, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate configuration: {0}")]
    Rank(String),

    #[error("point maps to infinity (homogeneous scale {0:e})")]
    PointAtInfinity(f64),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error(transparent)]
    Stats(#[from] StatsError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema { .. } => "schema",
            Error::Data(_) => "data",
            Error::Parameter(_) => "parameter",
            Error::Rank(_) => "rank",
            Error::PointAtInfinity(_) => "point_at_infinity",
            Error::Geometry(_) => "geometry",
            Error::Ordering(_) => "ordering",
            Error::Stats(_) => "stats",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
