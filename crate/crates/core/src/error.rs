use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    /// A block with zero norm reached the scaled update.
    #[error("degenerate iterate: node {node} has a zero {block} block")]
    DegenerateIterate { node: usize, block: &'static str },

    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("solver diverged at iteration {iteration} (loss = {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("malformed instance dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
