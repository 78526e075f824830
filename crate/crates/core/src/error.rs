use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("position ({x}, {y}) is outside the service area")]
    OutOfRange { x: f64, y: f64 },

    #[error("degenerate route: start and end coincide")]
    DegenerateRoute,

    #[error("waypoint {0} is the last waypoint and has no successor")]
    Terminal(usize),

    #[error("input file not found: {}", .0.display())]
    MissingInput(std::path::PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
