use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("record position {position} exceeds capacity {capacity}")]
    Capacity { position: usize, capacity: usize },

    #[error("store is full ({capacity} records)")]
    StoreFull { capacity: usize },

    #[error("key {0} not found")]
    NotFound(u64),

    #[error("query state: {0}")]
    QueryState(&'static str),

    #[error("query sequence number {got} is not after {last}")]
    OutOfOrder { last: u64, got: u64 },

    #[error("slot for query {0} is not live")]
    NotLive(u64),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
