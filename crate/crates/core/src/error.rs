use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside its valid domain ({reason})")]
    Domain {
        what: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("{0} is not below the Nyquist frequency")]
    Nyquist(String),

    #[error("least-squares fit did not converge after {iterations} iterations (last iterate {last:?})")]
    NonConvergence { iterations: usize, last: Vec<f64> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("heterogeneous input: {0}")]
    Heterogeneous(String),

    #[error("parameters not separately identifiable: {0}")]
    Unidentifiable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(what: &'static str, value: f64, reason: &'static str) -> Error {
    Error::Domain {
        what,
        value,
        reason,
    }
}
