use std::path::PathBuf;

use thiserror::Error;

use crate::simcore::SimTime;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot schedule event at {at} (clock is already at {now}): past event")]
    PastEvent { at: SimTime, now: SimTime },

    #[error("event budget of {budget} events exhausted at {at}; simulation livelock")]
    Livelock { budget: u64, at: SimTime },

    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("{path}:{line}: {field}: {message}")]
    Parse {
        path: String,
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },

    #[error("unknown stream {0}")]
    UnknownStream(u64),

    #[error("stream id space exhausted")]
    StreamIdsExhausted,

    #[error("request path is {len} bytes; the limit is {limit}")]
    PathTooLong { len: usize, limit: usize },

    #[error("{0}")]
    Metrics(String),

    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_scenario(self, scenario: impl Into<String>) -> Self {
        Error::Scenario {
            scenario: scenario.into(),
            source: Box::new(self),
        }
    }
}
