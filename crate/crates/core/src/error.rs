use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("node {node} out of range (graph has {n} nodes)")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("edge ({0}, {1}) does not exist")]
    MissingEdge(usize, usize),
    #[error("self-loop of node {0} cannot be removed")]
    SelfLoop(usize),
    #[error("node {0} has already been removed")]
    NodeRemoved(usize),
    #[error("features of node {0} have already been removed")]
    FeaturesRemoved(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("solver did not converge after {iterations} iterations (gradient norm {gradient_norm:e}, tolerance {tolerance:e})")]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
        tolerance: f64,
    },
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("power iteration did not converge after {0} iterations")]
    PowerIterationNotConverged(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
