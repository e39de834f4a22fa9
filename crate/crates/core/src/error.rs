use thiserror::Error;

use crate::graph::{NodeId, PuId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("forward trace does not match this network: {0}")]
    StaleTrace(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown processing unit {0}")]
    UnknownPu(PuId),
    #[error("node {0} has the wrong kind for this operation")]
    WrongNodeKind(NodeId),
    #[error("dangling reference: {0}")]
    Dangling(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("environment error: {0}")]
    Environment(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
