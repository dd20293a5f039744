use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("metric is not positive definite at node {node}")]
    Definiteness { node: usize },

    #[error("cone violation at {} node(s), worst margin {min_margin:.3e}", nodes.len())]
    ConeViolation { nodes: Vec<usize>, min_margin: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("chart error: {0}")]
    Chart(String),

    #[error("geodesic left the domain at parameter {parameter:.6}")]
    OutOfDomain { parameter: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
