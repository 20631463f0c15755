//! Retrieval-augmented question answering for biomedical Yes/No, Factoid and
//! List questions.
//!
//! The crate is organised along the data flow of a run:
//!
//! - [`corpus`] and [`index`]: title/abstract document store and the BM25
//!   inverted index over it.
//! - [`query`]: the boolean query-string language emitted by the query
//!   generator (parser, validator, renderer, relaxation).
//! - [`llm`]: provider-agnostic chat completion with scripted and replay
//!   backends, plus structured-output parsing.
//! - [`rerank`]: embedding-cosine reranking of BM25 hits.
//! - [`retrieval`] and [`fallback`]: the query generation / refinement state
//!   machine and the external source chain.
//! - [`context`], [`qa`] and [`synthesis`]: context assembly, candidate
//!   generation across an ensemble of models, and confidence-gated synthesis.
//! - [`eval`]: accuracy, MRR and list F1 plus BioASQ file IO.
//! - [`config`] and [`run`]: run configuration and the end-to-end phases.

pub mod config;
pub mod context;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fallback;
pub mod index;
pub mod llm;
pub mod prompts;
pub mod qa;
pub mod query;
pub mod rerank;
pub mod retrieval;
pub mod run;
pub mod synthesis;
pub mod tokenize;
mod util;

pub use corpus::{Corpus, CorpusStats, Document, IngestReport};
pub use error::{Error, Result};
pub use index::{Bm25Index, Bm25Params, Field, Provenance, ScoredDoc};
pub use qa::{Question, QuestionType};
pub use query::{parse_query, render_query, validate_query, QueryAst};
