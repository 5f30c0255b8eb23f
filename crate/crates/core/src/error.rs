use thiserror::Error;

/// Errors raised by the simulator and estimators. Wrapping variants keep
/// their cause in [`std::error::Error::source`] rather than in the message.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate consensus: {0}")]
    DegenerateConsensus(String),

    #[error("degenerate network: {0}")]
    DegenerateNetwork(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dead network: mean measured bandwidth is zero")]
    DeadNetwork,

    #[error("lambert W0 argument {0} is below the branch point -1/e")]
    LambertDomain(f64),

    #[error("closed form inapplicable: round {0} of the history is not bottlenecked")]
    NotBottlenecked(usize),

    #[error("in round {round}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed csv")]
    Csv(#[from] csv::Error),

    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
