use thiserror::Error;

/// Errors produced by the simulation and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("exhaustive beam search over {candidates} codewords exceeds the cap of {cap}; use the heuristic search")]
    SearchTooLarge { candidates: u128, cap: u128 },

    #[error("user {user} has no serving AP with a nonzero channel estimate")]
    DegenerateUser { user: usize },

    #[error("group {group} has zero fronthaul rate")]
    DegenerateGroup { group: usize },

    #[error("realization {realization} (seed {seed}): {source}")]
    Realization {
        realization: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
