#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use bioqa::config::RunConfig;
use bioqa::context::Source;
use bioqa::fallback::{FallbackChain, FixtureSearcher, SourceSearcher};
use bioqa::llm::{Binding, ChatRequest, ScriptedBackend};
use bioqa::prompts::Templates;
use bioqa::rerank::DeterministicEmbedder;
use bioqa::run::Runtime;
use bioqa::{Bm25Index, Bm25Params, Corpus, Document, Question, QuestionType};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e")
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// The end-to-end fixture copied into a fresh directory, with the corpus
/// and index built under `build/index` as the config expects.
pub fn e2e_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixture_dir(), dir.path());
    let mut corpus = Corpus::new();
    corpus.ingest_path(dir.path().join("documents.jsonl")).unwrap();
    let out = dir.path().join("build/index");
    let index = Bm25Index::build(&corpus, Bm25Params::default()).unwrap();
    index.save(&out).unwrap();
    corpus.save(&out).unwrap();
    dir
}

// ---------------------------------------------------------------------------
// BM25 reference scorer, written from the formula with no shared code.

pub const VOCAB: &[&str] = &[
    "gene", "protein", "cell", "tumor", "virus", "drug", "dose", "trial", "risk", "mouse", "human", "blood", "brain",
    "liver", "heart", "kinase", "receptor", "insulin", "aspirin", "p53",
];

pub fn random_text(rng: &mut ChaCha8Rng, max_tokens: usize) -> String {
    let n = rng.random_range(0..=max_tokens);
    (0..n).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_corpus(rng: &mut ChaCha8Rng, max_docs: usize, max_tokens: usize) -> Vec<Document> {
    let n = rng.random_range(1..=max_docs);
    (0..n)
        .map(|i| Document::new(format!("doc{i:03}"), random_text(rng, max_tokens), random_text(rng, max_tokens)))
        .collect()
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// Okapi BM25 (k1 = 1.2, b = 0.75, idf = ln(1 + (N - df + 0.5)/(df + 0.5)))
/// recomputed from the raw documents, title and abstract scored separately
/// and summed.
pub struct Bm25Oracle {
    ids: Vec<String>,
    fields: [Vec<Vec<String>>; 2],
}

impl Bm25Oracle {
    pub fn new(docs: &[Document]) -> Self {
        Bm25Oracle {
            ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            fields: [
                docs.iter().map(|d| words(&d.title)).collect(),
                docs.iter().map(|d| words(&d.abstract_text)).collect(),
            ],
        }
    }

    fn field_score(toks: &[Vec<String>], term: &str, doc: usize) -> f64 {
        let (k1, b) = (1.2, 0.75);
        let n = toks.len() as f64;
        let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let df = toks.iter().filter(|t| t.iter().any(|w| w == term)).count() as f64;
        let tf = toks[doc].iter().filter(|w| *w == term).count() as f64;
        if tf == 0.0 {
            return 0.0;
        }
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let len = toks[doc].len() as f64;
        let norm = if avg > 0.0 { len / avg } else { 0.0 };
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    pub fn term_score(&self, term: &str, doc: usize) -> f64 {
        self.fields.iter().map(|f| Self::field_score(f, term, doc)).sum()
    }

    fn contains(&self, term: &str, doc: usize) -> bool {
        self.fields.iter().any(|f| f[doc].iter().any(|w| w == term))
    }

    /// Ranking for `a`, `a OR b` (`and = false`) or `a AND b`.
    pub fn rank(&self, terms: &[&str], and: bool) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = (0..self.ids.len())
            .filter(|&d| {
                let hits = terms.iter().filter(|t| self.contains(t, d)).count();
                if and {
                    hits == terms.len()
                } else {
                    hits > 0
                }
            })
            .map(|d| (self.ids[d].clone(), terms.iter().map(|t| self.term_score(t, d)).sum()))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

// ---------------------------------------------------------------------------
// Scripted 100-question suite: 4 questions whose first query is too narrow,
// 5 whose retrieved abstracts do not answer them.

pub const SUITE_SIZE: usize = 100;
pub const SUITE_NARROW: [usize; 4] = [7, 31, 58, 90];
pub const SUITE_UNANSWERABLE: [usize; 5] = [12, 27, 44, 66, 83];
pub const SUITE_EVIDENCE: &str = "direct evidence";

fn suite_topic(i: usize) -> String {
    format!("topic{i:03}")
}

pub fn suite_corpus() -> Corpus {
    let mut docs = Vec::new();
    for i in 0..SUITE_SIZE {
        let t = suite_topic(i);
        for j in 0..8 {
            let finding = if SUITE_UNANSWERABLE.contains(&i) {
                "The mechanism remains unclear.".to_string()
            } else {
                format!("This study gives {SUITE_EVIDENCE} for {t}.")
            };
            let extra = if j < 2 { " rareword" } else { "" };
            docs.push(Document::new(
                format!("{i:03}{j:02}"),
                format!("Report {j} on {t}"),
                format!("We studied {t} in cohort {j}.{extra} {finding}"),
            ));
        }
    }
    Corpus::from_documents(docs)
}

pub fn suite_questions() -> Vec<Question> {
    (0..SUITE_SIZE)
        .map(|i| {
            let qtype = QuestionType::ALL[i % 3];
            Question::new(format!("s{i:03}"), qtype, format!("What is known about {}?", suite_topic(i)))
        })
        .collect()
}

fn topic_of(req: &ChatRequest) -> Option<usize> {
    let at = req.user_prompt.find("topic")?;
    req.user_prompt[at + 5..at + 8].parse().ok()
}

fn suite_generator() -> Binding {
    let b = ScriptedBackend::new().with_handler(|req| {
        let i = topic_of(req)?;
        let t = suite_topic(i);
        if req.user_prompt.contains("Task: query-refinement") {
            Some(t)
        } else if SUITE_NARROW.contains(&i) {
            Some(format!("{t} AND rareword"))
        } else {
            Some(t)
        }
    });
    Binding::new("suite-query", Arc::new(b))
}

fn suite_candidate(model: &str) -> Binding {
    let b = ScriptedBackend::new().with_handler(|req| {
        let i = topic_of(req)?;
        if !req.user_prompt.contains(SUITE_EVIDENCE) {
            return Some("INSUFFICIENT_EVIDENCE".into());
        }
        let answer = if req.user_prompt.contains("Task: yesno-answer") {
            "\"yes\"".to_string()
        } else {
            format!("[\"answer{i}\"]")
        };
        Some(format!("```json\n{{\"answer\": {answer}}}\n```"))
    });
    Binding::new(model, Arc::new(b))
}

fn suite_synthesizer() -> Binding {
    let b = ScriptedBackend::new().with_handler(|req| {
        let i = topic_of(req)?;
        Some(format!(
            "```json\n{{\"answer\": [\"answer{i}\"], \"confidence\": 0.8, \"justification\": \"agreement\"}}\n```"
        ))
    });
    Binding::new("suite-synth", Arc::new(b))
}

/// Fixture fallback directory with evidence for every unanswerable question.
pub fn suite_fallback(dir: &Path) -> FallbackChain {
    for &i in &SUITE_UNANSWERABLE {
        let docs = serde_json::json!([{
            "doc_id": format!("web{i}"),
            "title": format!("Web page on {}", suite_topic(i)),
            "text": format!("An external source gives {SUITE_EVIDENCE} for {}.", suite_topic(i)),
        }]);
        std::fs::write(dir.join(format!("s{i:03}.json")), docs.to_string()).unwrap();
    }
    let sources: Vec<Arc<dyn SourceSearcher>> = vec![Arc::new(FixtureSearcher::new("web", dir))];
    FallbackChain::new(sources, 10).unwrap()
}

pub fn suite_runtime(fallback_dir: &Path) -> Runtime {
    let config = RunConfig::from_toml_str(
        r#"
        [models.generator]
        model_id = "suite-query"
        kind = "scripted"
        [[models.candidates]]
        model_id = "a"
        kind = "scripted"
        [models.synthesizer]
        model_id = "suite-synth"
        kind = "scripted"
        "#,
    )
    .unwrap();
    let corpus = suite_corpus();
    let index = Bm25Index::build(&corpus, Bm25Params::default()).unwrap();
    let generator = suite_generator();
    Runtime {
        config,
        config_digest: "suite".into(),
        corpus: Some(corpus),
        index: Some(index),
        templates: Templates::default(),
        refiner: generator.clone(),
        generator,
        candidates: vec![suite_candidate("a"), suite_candidate("b"), suite_candidate("c")],
        synthesizer: suite_synthesizer(),
        embedder: Arc::new(DeterministicEmbedder::default()),
        fallback: Some(suite_fallback(fallback_dir)),
    }
}

// ---------------------------------------------------------------------------
// Random context sources.

const SENTENCE_WORDS: &[&str] = &[
    "aspirin",
    "reduced",
    "pain",
    "in",
    "adults",
    "the",
    "trial",
    "enrolled",
    "patients",
    "with",
    "chronic",
    "disease",
    "p",
    "0.05",
    "IL-6",
    "levels",
    "rose",
    "after",
    "treatment",
];

pub fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=14);
    let mut s: Vec<&str> = (0..n).map(|_| *SENTENCE_WORDS.choose(rng).unwrap()).collect();
    s[0] = ["Aspirin", "The", "Patients", "Levels"][rng.random_range(0..4)];
    let end = [".", "!", "?", ""][rng.random_range(0..4)];
    format!("{}{}", s.join(" "), end)
}

pub fn random_sources(rng: &mut ChaCha8Rng) -> Vec<Source> {
    let n = rng.random_range(0..=12);
    (0..n)
        .map(|i| {
            let k = rng.random_range(0..=6);
            let text = (0..k).map(|_| random_sentence(rng)).collect::<Vec<_>>().join(" ");
            let title = if rng.random_bool(0.5) { random_sentence(rng) } else { String::new() };
            Source::new(format!("s{i}"), title, text)
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Random query trees and strings.

const TERM_WORDS: &[&str] =
    &["aspirin", "IL-6", "p53", "covid19", "tnf-alpha", "beta", "and", "or", "not", "Heart", "x", "1990", "brca1"];
const PHRASE_WORDS: &[&str] = &["heart", "attack", "p53", "type", "2", "diabetes", "alpha", "and", "not"];

fn random_field(rng: &mut ChaCha8Rng) -> Option<bioqa::Field> {
    match rng.random_range(0..4) {
        0 => Some(bioqa::Field::Title),
        1 => Some(bioqa::Field::Abstract),
        _ => None,
    }
}

fn random_leaf(rng: &mut ChaCha8Rng) -> bioqa::QueryAst {
    if rng.random_bool(0.7) {
        bioqa::QueryAst::Term {
            text: TERM_WORDS.choose(rng).unwrap().to_string(),
            field: random_field(rng),
            fuzzy: rng.random_bool(0.25),
        }
    } else {
        let n = rng.random_range(1..=3);
        bioqa::QueryAst::Phrase {
            tokens: (0..n).map(|_| PHRASE_WORDS.choose(rng).unwrap().to_string()).collect(),
            field: random_field(rng),
        }
    }
}

/// Tree of depth at most `depth` (a leaf has depth 1).
pub fn random_tree(rng: &mut ChaCha8Rng, depth: usize) -> bioqa::QueryAst {
    if depth <= 1 || rng.random_bool(0.3) {
        return random_leaf(rng);
    }
    match rng.random_range(0..5) {
        0 => bioqa::QueryAst::negate(random_tree(rng, depth - 1)),
        k => {
            let n = rng.random_range(2..=4);
            let children = (0..n).map(|_| random_tree(rng, depth - 1)).collect();
            if k % 2 == 0 {
                bioqa::QueryAst::And(children)
            } else {
                bioqa::QueryAst::Or(children)
            }
        }
    }
}

/// A structurally valid query tree (at least one non-negated leaf).
pub fn random_query(rng: &mut ChaCha8Rng, depth: usize) -> bioqa::QueryAst {
    loop {
        let t = random_tree(rng, depth);
        if t.check().is_ok() {
            return t;
        }
    }
}

const SOUP: &[&str] = &[
    "aspirin",
    "pain",
    "AND",
    "OR",
    "NOT",
    "(",
    ")",
    "\"heart attack\"",
    "title:",
    "abstract:",
    "~",
    "x~",
    "*",
    "\"",
    "title:(a OR b)",
    "p53",
    "  ",
    "and",
    "IL-6",
    ":",
    "[",
    "?",
];

/// Query-like text: a loosely rendered valid tree or a random token soup.
pub fn random_query_text(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.6) {
        let tree = random_query(rng, 4);
        let mut s = bioqa::render_query(&tree);
        if rng.random_bool(0.3) {
            s = s.replace(" OR ", " ");
        }
        if rng.random_bool(0.3) {
            s = format!("  {s} ");
        }
        s
    } else {
        let n = rng.random_range(1..=8);
        (0..n).map(|_| *SOUP.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    }
}
