use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spanning vectors are dependent: rank {rank}, expected {expected}")]
    DegenerateSpan { rank: usize, expected: usize },

    #[error("leaf lattice has rank {lattice_rank}, strictly between 0 and leaf dimension {leaf_dim}")]
    MixedRationality { lattice_rank: usize, leaf_dim: usize },

    #[error("metric coefficient `{coefficient}` is not positive at (x={x}, y={y}): {value}")]
    NonPositiveMetric {
        coefficient: &'static str,
        x: f64,
        y: f64,
        value: f64,
    },

    #[error("transverse coefficient varies along a leaf (row y={y}, variation {variation:e})")]
    TransverseLeafDependence { y: f64, variation: f64 },

    #[error("volume weight underflows at grid node {index}")]
    SingularWeight { index: usize },

    #[error("lattice enumeration budget exceeded: more than {cap} candidates")]
    BudgetExceeded { cap: u64 },

    #[error("eigensolver did not converge: {converged}/{requested} pairs after {matvecs} matrix applications")]
    NoConvergence {
        matvecs: usize,
        converged: usize,
        requested: usize,
    },

    #[error("insufficient data: {usable} usable points, need at least {needed}")]
    InsufficientData { usable: usize, needed: usize },

    #[error("test function does not decay and its support extends past {lambda_max}")]
    UnsupportedTail { lambda_max: f64 },

    #[error("leaf solve failed at y index {y_index}: {source}")]
    LeafSolve {
        y_index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("expression error at offset {offset} in `{input}`: {message}")]
    Expression {
        input: String,
        offset: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
