//! Query generation, validation, BM25 search, refinement and reranking for
//! one question.
//!
//! ```text
//! generate -> validate --invalid--> refine --+
//!               |                            |
//!            execute --hits < threshold--> refine
//!               |
//!            rerank -> final docs
//! ```
//!
//! Both kinds of failure go to the refiner binding. When the refiner call
//! fails, the deterministic relaxation takes its place for that round.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::index::{Bm25Index, ScoredDoc, MAX_HITS};
use crate::llm::{Binding, ChatRequest};
use crate::prompts::{fill, Templates};
use crate::qa::{Question, MAX_OUTPUT_TOKENS};
use crate::query::{parse_query, relax_query, render_query, validate_query, QueryAst, ValidationReport, KEYWORDS};
use crate::rerank::{rerank, Embedder, RerankConfig, DEFAULT_TOP_N};
use crate::tokenize::tokenize;

/// Sampling temperature for query generation and refinement.
pub const QUERY_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_max_hits")]
    pub max_hits: usize,
    #[serde(default = "default_refine_threshold")]
    pub refine_threshold: usize,
    #[serde(default = "default_top_n")]
    pub rerank_top_n: usize,
    #[serde(default = "default_max_refinements")]
    pub max_refinements: usize,
    #[serde(default = "default_batch")]
    pub rerank_batch_size: usize,
}

fn default_max_hits() -> usize {
    MAX_HITS
}
fn default_refine_threshold() -> usize {
    5
}
fn default_top_n() -> usize {
    DEFAULT_TOP_N
}
fn default_max_refinements() -> usize {
    2
}
fn default_batch() -> usize {
    RerankConfig::default().batch_size
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_hits: default_max_hits(),
            refine_threshold: default_refine_threshold(),
            rerank_top_n: default_top_n(),
            max_refinements: default_max_refinements(),
            rerank_batch_size: default_batch(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_hits == 0 || self.max_hits > MAX_HITS {
            return Err(format!("max_hits must be in 1..={MAX_HITS}"));
        }
        if self.refine_threshold == 0 || self.refine_threshold > self.max_hits {
            return Err("refine_threshold must be in 1..=max_hits".into());
        }
        if self.rerank_top_n == 0 || self.rerank_top_n > self.max_hits {
            return Err("rerank_top_n must be in 1..=max_hits".into());
        }
        if self.max_refinements == 0 {
            return Err("max_refinements must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefineReason {
    Invalid,
    TooFew,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RevisionSource {
    Llm,
    Relax,
    Keywords,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementRound {
    pub reason: RefineReason,
    pub failed_query: String,
    /// Hit count for too-few rounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hit_count: Option<usize>,
    pub revised_query: String,
    pub source: RevisionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalTrace {
    pub question_id: String,
    pub generated_query: String,
    pub validation: ValidationReport,
    pub refinement_rounds: Vec<RefinementRound>,
    /// One entry per executed search.
    pub hit_count_per_round: Vec<usize>,
    pub final_query: Option<String>,
    pub final_docs: Vec<ScoredDoc>,
    /// Refinement budget used up without reaching the hit threshold.
    pub exhausted: bool,
    /// Reranking failed and BM25 order was kept.
    pub rerank_fallback: bool,
    pub anomalies: Vec<String>,
}

/// Failure description handed to the refiner.
pub enum Failure<'a> {
    Invalid(&'a ValidationReport),
    TooFew(usize),
}

impl Failure<'_> {
    fn describe(&self) -> String {
        match self {
            Failure::Invalid(report) => {
                let issues: Vec<String> = report
                    .issues
                    .iter()
                    .map(|i| format!("{} ({}) at {}..{}", i.code, i.message, i.span.start, i.span.end))
                    .collect();
                format!("invalid query syntax: {}", issues.join("; "))
            }
            Failure::TooFew(n) => format!("too few results: the query matched only {n} documents"),
        }
    }
}

pub fn generation_request(question: &Question, binding: &Binding, templates: &Templates) -> ChatRequest {
    let question_json = serde_json::to_string(&question.body).expect("string serializes");
    binding.request(
        &templates.query_system,
        &fill(&templates.query_generation, &[("question_json", &question_json)]),
        QUERY_TEMPERATURE,
        MAX_OUTPUT_TOKENS,
    )
}

pub fn refinement_request(
    question: &Question,
    failed_query: &str,
    failure: &Failure<'_>,
    binding: &Binding,
    templates: &Templates,
) -> ChatRequest {
    let question_json = serde_json::to_string(&question.body).expect("string serializes");
    let user = fill(
        &templates.query_refinement,
        &[("question_json", &question_json), ("failed_query", failed_query), ("failure", &failure.describe())],
    );
    binding.request(&templates.query_system, &user, QUERY_TEMPERATURE, MAX_OUTPUT_TOKENS)
}

/// Model output as the query text: trimmed, with a surrounding code fence
/// removed. Nothing else is touched.
fn query_from_response(text: &str) -> String {
    let t = text.trim();
    if let Some(inner) = t.strip_prefix("```") {
        let inner = inner.split_once('\n').map_or(inner, |(_, rest)| rest);
        return inner.trim_end().trim_end_matches("```").trim().to_string();
    }
    t.to_string()
}

pub fn generate_search_query(
    question: &Question,
    binding: &Binding,
    templates: &Templates,
) -> Result<String, crate::llm::GatewayError> {
    let req = generation_request(question, binding, templates);
    Ok(query_from_response(&binding.complete(&req)?.text))
}

pub fn refine_search_query(
    question: &Question,
    failed_query: &str,
    failure: &Failure<'_>,
    binding: &Binding,
    templates: &Templates,
) -> Result<String, crate::llm::GatewayError> {
    let req = refinement_request(question, failed_query, failure, binding, templates);
    Ok(query_from_response(&binding.complete(&req)?.text))
}

/// Function words that would match nearly every abstract.
const STOPWORDS: &[&str] = &[
    "are", "can", "did", "does", "for", "from", "has", "have", "how", "into", "its", "the", "than", "that", "their",
    "there", "these", "this", "was", "were", "what", "when", "where", "which", "who", "why", "with",
];

/// Distinct question tokens joined with OR: the last-resort query.
pub fn keyword_query(question: &str) -> Option<String> {
    let mut seen = std::collections::HashSet::new();
    let leaves: Vec<QueryAst> = tokenize(question)
        .into_iter()
        .filter(|t| t.chars().count() > 2 && !KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(t)))
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .filter(|t| seen.insert(t.clone()))
        .map(QueryAst::term)
        .collect();
    match leaves.len() {
        0 => None,
        1 => Some(render_query(&leaves[0])),
        _ => Some(render_query(&QueryAst::Or(leaves))),
    }
}

pub struct Retriever<'a> {
    pub index: &'a Bm25Index,
    pub corpus: &'a Corpus,
    pub generator: &'a Binding,
    pub refiner: &'a Binding,
    pub embedder: &'a dyn Embedder,
    pub config: PipelineConfig,
    pub templates: &'a Templates,
}

impl Retriever<'_> {
    fn revise(
        &self,
        question: &Question,
        failed_query: &str,
        failure: Failure<'_>,
        last_ast: Option<&QueryAst>,
        trace: &mut RetrievalTrace,
    ) -> String {
        let (reason, hit_count) = match failure {
            Failure::Invalid(_) => (RefineReason::Invalid, None),
            Failure::TooFew(n) => (RefineReason::TooFew, Some(n)),
        };
        let (revised, source) =
            match refine_search_query(question, failed_query, &failure, self.refiner, self.templates) {
                Ok(q) => (q, RevisionSource::Llm),
                Err(e) => {
                    trace.anomalies.push(format!("refiner failed ({}); using deterministic relaxation", e.code()));
                    let relaxed = last_ast.map(|ast| relax_query(ast, self.index));
                    match relaxed {
                        Some(Ok(ast)) => (render_query(&ast), RevisionSource::Relax),
                        other => {
                            if let Some(Err(e)) = other {
                                trace.anomalies.push(format!("relaxation failed: {e}"));
                            }
                            (keyword_query(&question.body).unwrap_or_default(), RevisionSource::Keywords)
                        }
                    }
                }
            };
        trace.refinement_rounds.push(RefinementRound {
            reason,
            failed_query: failed_query.to_string(),
            hit_count,
            revised_query: revised.clone(),
            source,
        });
        revised
    }

    pub fn retrieve(&self, question: &Question) -> RetrievalTrace {
        let cfg = &self.config;
        let mut trace = RetrievalTrace {
            question_id: question.question_id.clone(),
            generated_query: String::new(),
            validation: validate_query(""),
            refinement_rounds: Vec::new(),
            hit_count_per_round: Vec::new(),
            final_query: None,
            final_docs: Vec::new(),
            exhausted: false,
            rerank_fallback: false,
            anomalies: Vec::new(),
        };
        let mut query = match generate_search_query(question, self.generator, self.templates) {
            Ok(q) => q,
            Err(e) => {
                trace.anomalies.push(format!("query generation failed ({}); using question keywords", e.code()));
                keyword_query(&question.body).unwrap_or_default()
            }
        };
        trace.generated_query = query.clone();
        trace.validation = validate_query(&query);

        let mut last_ast: Option<QueryAst> = None;
        let mut hits: Vec<ScoredDoc> = Vec::new();
        loop {
            let report = validate_query(&query);
            let ast = if report.ok {
                match parse_query(&query) {
                    Ok(ast) => Some(ast),
                    Err(e) => {
                        trace.anomalies.push(format!("validated query failed to parse: {e}"));
                        None
                    }
                }
            } else {
                None
            };
            let Some(ast) = ast else {
                hits.clear();
                if trace.refinement_rounds.len() < cfg.max_refinements {
                    query = self.revise(question, &query, Failure::Invalid(&report), last_ast.as_ref(), &mut trace);
                    continue;
                }
                trace.exhausted = true;
                break;
            };
            hits = match self.index.execute_query(&ast, cfg.max_hits) {
                Ok(h) => h,
                Err(e) => {
                    trace.anomalies.push(format!("search failed: {e}"));
                    Vec::new()
                }
            };
            trace.hit_count_per_round.push(hits.len());
            trace.final_query = Some(query.clone());
            last_ast = Some(ast);
            if hits.len() < cfg.refine_threshold {
                if trace.refinement_rounds.len() < cfg.max_refinements {
                    query = self.revise(question, &query, Failure::TooFew(hits.len()), last_ast.as_ref(), &mut trace);
                    continue;
                }
                trace.exhausted = true;
            }
            break;
        }

        if !hits.is_empty() {
            let rc = RerankConfig { top_n: cfg.rerank_top_n, batch_size: cfg.rerank_batch_size };
            trace.final_docs = match rerank(&question.body, &hits, self.corpus, self.embedder, &rc) {
                Ok(docs) => docs,
                Err(e) => {
                    trace.anomalies.push(format!("{e}; keeping BM25 order"));
                    trace.rerank_fallback = true;
                    hits.truncate(cfg.rerank_top_n);
                    hits
                }
            };
        }
        trace
    }
}
