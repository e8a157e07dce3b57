use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("Matern-1/2 kernel has no mean-square derivative; derivative blocks unsupported")]
    DerivativeUnsupported,
    #[error("Cholesky factorization failed at pivot {pivot} (value {value:.3e})")]
    FactorizationFailure { pivot: usize, value: f64 },
    #[error("joint {joint} value {value} lies on or outside limits [{min}, {max}]")]
    OutOfLimits {
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("SDF grid of {requested} voxels exceeds cap of {cap}")]
    GridTooLarge { requested: usize, cap: usize },
    #[error("gradient component {index} is not finite")]
    NonFiniteGradient { index: usize },
    #[error("start or goal state lies on the joint-limit boundary")]
    InfeasibleEndpoint,
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
