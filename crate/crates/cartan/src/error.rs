use thiserror::Error;

pub type Result<T> = std::result::Result<T, GeomError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeomError {
    #[error("non-finite evaluation at input {input:?}")]
    Evaluation { input: Vec<f64> },

    #[error("no chart of model `{model}` accepts point {point:?}")]
    UncoveredPoint { model: String, point: Vec<f64> },

    #[error("point {point:?} lies outside chart {chart}")]
    OutsideChart { chart: usize, point: Vec<f64> },

    #[error("membership residual {residual:e} exceeds tolerance at {point:?}")]
    NotMember { residual: f64, point: Vec<f64> },

    #[error("vector is not tangent (residual {residual:e})")]
    NotTangent { residual: f64 },

    #[error("membership derivative has rank {rank}, expected {expected}")]
    DegeneratePoint { rank: usize, expected: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("log map did not converge after {iterations} iterations (residual {residual:e})")]
    OutOfNormalNeighborhood { iterations: usize, residual: f64 },

    #[error("no geodesic chain reaches the target within {hops} hops")]
    NoChain { hops: usize },

    #[error("linear map is not an involution (residual {residual:e})")]
    NotInvolutive { residual: f64 },

    #[error("linear map is not a bracket automorphism (residual {residual:e})")]
    NotAutomorphism { residual: f64 },

    #[error("map is not a Lie triple system morphism (residual {residual:e})")]
    NotMorphism { residual: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
