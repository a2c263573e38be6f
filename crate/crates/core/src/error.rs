use thiserror::Error;

use nalgebra::DVector;

#[derive(Debug, Error)]
pub enum PandaError {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("normal equations are numerically rank deficient (rank {rank} of {cols})")]
    NumericalRank { rank: usize, cols: usize },

    #[error("IRLS did not converge after {iterations} iterations")]
    FitDivergence {
        iterations: usize,
        last: DVector<f64>,
    },

    #[error("node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<PandaError>,
    },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
}

impl PandaError {
    pub(crate) fn at_node(self, node: usize) -> Self {
        PandaError::Node {
            node,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, PandaError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(PandaError::Validation(msg.into()))
}
