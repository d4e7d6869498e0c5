use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("case file is missing the `{0}` matrix")]
    MissingMatrix(&'static str),

    #[error("invalid network: {0}")]
    Validation(String),

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("branch {from}-{to} has zero series impedance")]
    SingularImpedance { from: usize, to: usize },

    #[error("angle bounds [{lo}, {hi}] exceed pi/2 in magnitude")]
    UnsupportedBounds { lo: f64, hi: f64 },

    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("model error: {0}")]
    Model(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("{0}")]
    Algorithm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
