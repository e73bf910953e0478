use thiserror::Error;

/// Errors produced by the calibration library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported roughness {0}: supported values are 1/2, 1, 3/2, 2, 5/2, 3 and 7/2")]
    UnsupportedRoughness(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {point:?} lies outside the domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("non-PD Gram matrix: Cholesky failed even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("Hessian of the L2 loss is not positive definite at theta {theta:?}")]
    HessianNotPositiveDefinite { theta: Vec<f64> },

    #[error("oracle did not converge: {0}")]
    OracleNotConverged(String),

    #[error("MAP estimation failed from every start; best objective {best} at {at:?}")]
    MapFailed { best: f64, at: Vec<f64> },

    #[error("unknown builtin configuration {0} (expected 1, 2 or 3)")]
    UnknownConfig(u32),

    #[error("grid of {size} points exceeds the dense covariance limit of {limit}")]
    GridTooLarge { size: usize, limit: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{method}: {source}")]
    Method {
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps the error with the label of the method that produced it.
    pub fn in_method(self, method: impl Into<String>) -> Self {
        Error::Method {
            method: method.into(),
            source: Box::new(self),
        }
    }
}
