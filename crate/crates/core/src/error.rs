use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent step sizes, delays, periods or other setup values.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("solution diverged at t = {time}")]
    Diverged { time: f64 },

    #[error("catalog error: {0}")]
    Catalog(String),

    /// Input data rejected before any numerics ran.
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("resonance: {0}")]
    Resonance(String),

    #[error("no return to the section within {max_time}")]
    NoReturn { max_time: f64 },

    #[error("parameter {value} outside interpolation hull [{lo}, {hi}]")]
    Extrapolation { value: f64, lo: f64, hi: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
