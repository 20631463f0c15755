//! Embedding-cosine reranking of BM25 hits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::index::{Provenance, ScoredDoc};
use crate::llm::{HttpAdapter, HttpClient};
use crate::tokenize::{token_spans, truncate_to_tokens};

pub const DEFAULT_TOP_N: usize = 300;
pub const DETERMINISTIC_DIMENSION: usize = 64;
/// Token bound on the text sent to an embedder for one document.
pub const MAX_DOC_TOKENS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RerankError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("RERANK_UNAVAILABLE: {0}")]
    Unavailable(String),
    #[error("embedder returned dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid rerank config: {0}")]
    Config(String),
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    /// Unit-length embedding of `text`.
    fn embed(&self, text: &str) -> Result<Vec<f64>, RerankError>;
}

pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Hermetic embedder: bag of tokens hashed into `dimension` buckets with
/// FNV-1a, then L2-normalized. Text without any token hashes the trimmed
/// raw string into a single bucket.
#[derive(Debug, Clone, Copy)]
pub struct DeterministicEmbedder {
    dimension: usize,
}

impl Default for DeterministicEmbedder {
    fn default() -> Self {
        DeterministicEmbedder { dimension: DETERMINISTIC_DIMENSION }
    }
}

impl DeterministicEmbedder {
    pub fn new(dimension: usize) -> Result<Self, RerankError> {
        if dimension == 0 {
            return Err(RerankError::Config("dimension must be positive".into()));
        }
        Ok(DeterministicEmbedder { dimension })
    }
}

impl Embedder for DeterministicEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RerankError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(RerankError::EmptyText);
        }
        let mut v = vec![0.0; self.dimension];
        let mut any = false;
        for tok in token_spans(trimmed) {
            v[(fnv1a64(tok.text.as_bytes()) % self.dimension as u64) as usize] += 1.0;
            any = true;
        }
        if !any {
            v[(fnv1a64(trimmed.as_bytes()) % self.dimension as u64) as usize] = 1.0;
        }
        Ok(normalize(v))
    }
}

/// Embeddings from an HTTP service. The adapter body template sees `{{text}}`
/// and `response_path` must point at an array of numbers.
#[derive(Debug)]
pub struct RemoteEmbedder {
    client: HttpClient,
    dimension: usize,
}

impl RemoteEmbedder {
    pub fn new(adapter: HttpAdapter, dimension: usize) -> Result<Self, RerankError> {
        let client = HttpClient::new(adapter).map_err(|e| RerankError::Config(e.to_string()))?;
        Ok(RemoteEmbedder { client, dimension })
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RerankError> {
        if text.trim().is_empty() {
            return Err(RerankError::EmptyText);
        }
        let vars = BTreeMap::from([("text", Value::String(text.to_string()))]);
        let value = self.client.call(&vars).map_err(|e| RerankError::Unavailable(e.to_string()))?;
        let v: Vec<f64> = value
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect())
            .ok_or_else(|| RerankError::Unavailable("embedding response is not a numeric array".into()))?;
        if v.len() != self.dimension {
            return Err(RerankError::Dimension { expected: self.dimension, got: v.len() });
        }
        Ok(normalize(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerankConfig {
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    /// Documents embedded concurrently.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

fn default_batch() -> usize {
    8
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig { top_n: DEFAULT_TOP_N, batch_size: default_batch() }
    }
}

/// Title and abstract joined by the separator used for embedding, cut to
/// [`MAX_DOC_TOKENS`].
pub fn document_text(title: &str, abstract_text: &str) -> String {
    let joined = format!("{title} \n {abstract_text}");
    truncate_to_tokens(&joined, MAX_DOC_TOKENS).to_string()
}

fn embed_all(texts: &[String], embedder: &dyn Embedder, batch: usize) -> Result<Vec<Option<Vec<f64>>>, RerankError> {
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(batch.max(1)) {
        let results: Vec<Result<Option<Vec<f64>>, RerankError>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|t| {
                    s.spawn(move || {
                        // A document with no text at all scores 0 instead of failing the batch.
                        if t.trim().is_empty() {
                            Ok(None)
                        } else {
                            embedder.embed(t).map(Some)
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("embedding thread panicked")).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

/// Order `docs` by cosine similarity between the question and each
/// document's title+abstract, keeping the first `top_n`. Ties go to the
/// smaller doc_id. Documents missing from the corpus are embedded as empty
/// text and score 0.
pub fn rerank(
    question: &str,
    docs: &[ScoredDoc],
    corpus: &Corpus,
    embedder: &dyn Embedder,
    config: &RerankConfig,
) -> Result<Vec<ScoredDoc>, RerankError> {
    if config.top_n == 0 {
        return Err(RerankError::Config("top_n must be at least 1".into()));
    }
    if docs.is_empty() {
        return Ok(Vec::new());
    }
    let q = embedder.embed(question)?;
    let texts: Vec<String> = docs
        .iter()
        .map(|d| corpus.get(&d.doc_id).map(|doc| document_text(&doc.title, &doc.abstract_text)).unwrap_or_default())
        .collect();
    let vectors = embed_all(&texts, embedder, config.batch_size)?;
    let mut out: Vec<ScoredDoc> = docs
        .iter()
        .zip(vectors)
        .map(|(d, v)| ScoredDoc {
            doc_id: d.doc_id.clone(),
            score: v.map_or(0.0, |v| dot(&q, &v)),
            provenance: Provenance::Reranked,
        })
        .collect();
    crate::index::sort_scored(&mut out);
    out.truncate(config.top_n);
    Ok(out)
}
