//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by fitting, metrics, simulation, and cohort operations.
#[derive(Debug, Error)]
pub enum HirrrError {
    /// Structurally invalid arguments: dimension mismatches, bad ranges.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A value outside the family's support (for example a non-binary
    /// observation for a Bernoulli column).
    #[error("domain error: {0}")]
    Domain(String),

    /// A metric is undefined on the given input (single-class labels, empty
    /// positives).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Linear predictors grew past the clipping threshold for an unbounded
    /// curvature family.
    #[error("diverging linear predictor: {0}")]
    DivergingPredictor(String),

    /// Monte Carlo intercept calibration failed to bracket the target.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Malformed configuration input (surrogate map patterns, grids).
    #[error("config error: {0}")]
    Config(String),

    /// I/O or (de)serialization failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// CSV (de)serialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, HirrrError>;
