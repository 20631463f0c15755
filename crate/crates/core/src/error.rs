use thiserror::Error;

use crate::context::ContextError;
use crate::corpus::CorpusError;
use crate::eval::EvalError;
use crate::fallback::FallbackError;
use crate::index::IndexError;
use crate::llm::GatewayError;
use crate::query::QueryError;
use crate::rerank::RerankError;
use crate::synthesis::SynthesisError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error, one variant per subsystem.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Fallback(#[from] FallbackError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}
