use thiserror::Error;

use crate::interferometer::Configuration;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("fringe at theta={theta}, delta={delta} is a sum of two sinusoids")]
    SumOfSinusoids { theta: f64, delta: f64 },

    #[error("phase grid has {0} points, need at least {min}", min = crate::fringes::MIN_GRID)]
    GridTooSmall(usize),

    #[error("visibility undefined: max + min = 0")]
    ZeroDenominator,

    #[error("sinusoid fit is ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("fringe is flat (amplitude {amplitude:.3e}); phase is undefined")]
    FlatFringe { amplitude: f64 },

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("configuration {config} is required for {element} but is absent")]
    MissingConfiguration { config: Configuration, element: String },

    #[error("inconsistent data: {0}")]
    InconsistentData(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
