use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {max_asym:e})")]
    NotSymmetric { max_asym: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e} below tolerance {tol:e})")]
    NotPositiveDefinite { pivot: usize, value: f64, tol: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dimension {p} exceeds the limit of {max}; {hint}")]
    DimensionTooLarge { p: usize, max: usize, hint: &'static str },

    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("output variance is zero (beta^T Sigma beta = {0:e})")]
    ZeroVarianceModel(f64),

    #[error("gradient is zero at the linearization point (norm {0:e})")]
    ZeroGradient(f64),

    #[error("model returned a non-finite value at {0:?}")]
    NonFiniteEvaluation(Vec<f64>),

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("design matrix is rank deficient (|R_jj| ratio {ratio:e})")]
    RankDeficient { ratio: f64 },

    #[error("coordinate {0} has zero sample variance")]
    DegenerateCoordinates(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::ZeroVarianceModel(_)
                | Error::ZeroGradient(_)
                | Error::NonFiniteEvaluation(_)
                | Error::RankDeficient { .. }
                | Error::DegenerateCoordinates(_)
        )
    }
}
