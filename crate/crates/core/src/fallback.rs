//! External source chain for questions the index cannot answer.
//!
//! Sources are tried in order and the first one returning anything wins.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::index::{Provenance, ScoredDoc};
use crate::llm::{HttpAdapter, HttpClient};
use crate::qa::Question;

pub const DEFAULT_PER_SOURCE_CAP: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FallbackError {
    #[error("source {name}: {message}")]
    Source { name: String, message: String },
    #[error("NO_EVIDENCE: every fallback source came back empty")]
    NoEvidence,
    #[error("fallback configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Remote,
    Fixture,
}

/// A document returned by an external source, already reduced to clean text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackDoc {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub text: String,
}

pub trait SourceSearcher: Send + Sync {
    fn name(&self) -> &str;
    fn kind(&self) -> SourceKind;
    fn search(&self, question: &Question, limit: usize) -> Result<Vec<FallbackDoc>, FallbackError>;
}

/// Reads `<dir>/<question_id>.json`, a JSON array of documents. A missing
/// file means no results.
#[derive(Debug, Clone)]
pub struct FixtureSearcher {
    name: String,
    dir: PathBuf,
}

impl FixtureSearcher {
    pub fn new(name: impl Into<String>, dir: impl Into<PathBuf>) -> Self {
        FixtureSearcher { name: name.into(), dir: dir.into() }
    }
}

impl SourceSearcher for FixtureSearcher {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> SourceKind {
        SourceKind::Fixture
    }

    fn search(&self, question: &Question, limit: usize) -> Result<Vec<FallbackDoc>, FallbackError> {
        let path = self.dir.join(format!("{}.json", question.question_id));
        if !path.exists() {
            return Ok(Vec::new());
        }
        let err = |message: String| FallbackError::Source { name: self.name.clone(), message };
        let text = std::fs::read_to_string(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        let mut docs: Vec<FallbackDoc> =
            serde_json::from_str(&text).map_err(|e| err(format!("{}: {e}", path.display())))?;
        docs.truncate(limit);
        Ok(docs)
    }
}

/// Search API behind an [`HttpAdapter`]. The body template sees
/// `{{question}}` and `{{limit}}`; `response_path` must select an array of
/// `{doc_id, title, text}` objects.
#[derive(Debug)]
pub struct RemoteSearcher {
    name: String,
    client: HttpClient,
}

impl RemoteSearcher {
    pub fn new(name: impl Into<String>, adapter: HttpAdapter) -> Result<Self, FallbackError> {
        let client = HttpClient::new(adapter).map_err(|e| FallbackError::Config(e.to_string()))?;
        Ok(RemoteSearcher { name: name.into(), client })
    }
}

impl SourceSearcher for RemoteSearcher {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> SourceKind {
        SourceKind::Remote
    }

    fn search(&self, question: &Question, limit: usize) -> Result<Vec<FallbackDoc>, FallbackError> {
        let err = |message: String| FallbackError::Source { name: self.name.clone(), message };
        let vars = BTreeMap::from([("question", Value::String(question.body.clone())), ("limit", Value::from(limit))]);
        let value = self.client.call(&vars).map_err(|e| err(e.to_string()))?;
        let mut docs: Vec<FallbackDoc> = serde_json::from_value(value).map_err(|e| err(e.to_string()))?;
        docs.truncate(limit);
        Ok(docs)
    }
}

#[derive(Clone)]
pub struct FallbackChain {
    sources: Vec<Arc<dyn SourceSearcher>>,
    per_source_cap: usize,
}

impl std::fmt::Debug for FallbackChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = self.sources.iter().map(|s| s.name()).collect();
        f.debug_struct("FallbackChain").field("sources", &names).field("per_source_cap", &self.per_source_cap).finish()
    }
}

impl FallbackChain {
    pub fn new(sources: Vec<Arc<dyn SourceSearcher>>, per_source_cap: usize) -> Result<Self, FallbackError> {
        if sources.is_empty() {
            return Err(FallbackError::Config("fallback chain needs at least one source".into()));
        }
        if per_source_cap == 0 {
            return Err(FallbackError::Config("per-source cap must be positive".into()));
        }
        Ok(FallbackChain { sources, per_source_cap })
    }

    pub fn source_names(&self) -> Vec<&str> {
        self.sources.iter().map(|s| s.name()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceAttempt {
    pub source: String,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FallbackResult {
    pub docs: Vec<ScoredDoc>,
    /// Text for each entry of `docs`, same order.
    pub texts: Vec<FallbackDoc>,
    pub attempts: Vec<SourceAttempt>,
    /// Every source was empty (or failed).
    pub no_evidence: bool,
}

/// Query sources in chain order and stop at the first non-empty one. A
/// failing source is recorded and treated as empty. Scores are `1/(rank+1)`.
pub fn fallback_retrieve(question: &Question, chain: &FallbackChain) -> FallbackResult {
    let mut attempts = Vec::new();
    for source in &chain.sources {
        let (found, error) = match source.search(question, chain.per_source_cap) {
            Ok(docs) => (docs, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        };
        attempts.push(SourceAttempt { source: source.name().to_string(), count: found.len(), error });
        if !found.is_empty() {
            let docs = found
                .iter()
                .enumerate()
                .map(|(i, d)| ScoredDoc {
                    doc_id: d.doc_id.clone(),
                    score: 1.0 / (i as f64 + 1.0),
                    provenance: Provenance::Fallback(source.name().to_string()),
                })
                .collect();
            return FallbackResult { docs, texts: found, attempts, no_evidence: false };
        }
    }
    FallbackResult { docs: Vec::new(), texts: Vec::new(), attempts, no_evidence: true }
}
