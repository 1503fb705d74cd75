use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("value iteration did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("initial safe set violates its assumption: {0}")]
    InitialSafeSet(String),
    #[error("number of states must be at least 2 for the L1 width, got {0}")]
    DegenerateWidth(usize),
    #[error("brute-force oracle refused an instance with {pairs} candidate pairs (limit {limit})")]
    InstanceTooLarge { pairs: usize, limit: usize },
    #[error("no safe plan: every action at the initial state is forbidden")]
    NoSafePlan,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Csv {
        context: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("aggregating traces with different horizons ({0} vs {1})")]
    HorizonMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, Error>;
