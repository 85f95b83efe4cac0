use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unphysical transition pair: field radicand {radicand} is negative")]
    NegativeRadicand { radicand: f64 },
    #[error("inconsistent angle triple: {0}")]
    InconsistentAngles(String),
    #[error("eigenvalue near-degeneracy ({gap_mhz} MHz) makes state labeling ambiguous")]
    Degenerate { gap_mhz: f64 },
    #[error("pulse overlap: {0}")]
    PulseOverlap(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
