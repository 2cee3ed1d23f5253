use std::path::PathBuf;

use thiserror::Error;

use crate::harness::CampaignSummary;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// The estimator received a non-finite regressor or its information overflowed.
    #[error("estimator poisoned: {0}")]
    EstimatorPoisoned(&'static str),

    #[error("chain did not pass b-1 = {threshold} within {max_iters} iterations")]
    NonTermination { threshold: f64, max_iters: usize },

    #[error("resource ceiling: {requested} trajectories requested, limit is {limit}")]
    ResourceCeiling {
        requested: u64,
        limit: u64,
        partial: Box<CampaignSummary>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
