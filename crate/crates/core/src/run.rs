//! End-to-end runs: Phase A+ (retrieve, answer, fall back) and Phase B
//! (answer from provided snippets or referenced abstracts).

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{build_binding, build_embedder, build_fallback, resolve, LoadedConfig, RunConfig};
use crate::context::{assemble_context_seeded, ContextBundle, ContextMode, Source, SpanRef, Strategy};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{submission_json, SubmissionEntry};
use crate::fallback::{fallback_retrieve, FallbackChain, FallbackResult};
use crate::index::Bm25Index;
use crate::llm::{write_transcript, Binding, CallLog, CallRecord, ReplayBackend};
use crate::prompts::Templates;
use crate::qa::{generate_candidates, CandidateAnswer, Question};
use crate::rerank::Embedder;
use crate::retrieval::{RetrievalTrace, Retriever};
use crate::synthesis::{synthesize, SynthesizedAnswer};
use crate::util::parallel_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    APlus,
    BSnippets,
    BAbstracts,
}

impl Phase {
    pub fn context_mode(self) -> ContextMode {
        match self {
            Phase::APlus => ContextMode::RetrievedDocs,
            Phase::BSnippets => ContextMode::ProvidedSnippets,
            Phase::BAbstracts => ContextMode::FullAbstracts,
        }
    }
}

/// Bundle as recorded in the manifest: everything except the text itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextSummary {
    pub mode: ContextMode,
    pub strategy: Strategy,
    pub budget_tokens: usize,
    pub tokens: usize,
    pub provenance: Vec<SpanRef>,
    pub low_evidence: bool,
}

impl From<&ContextBundle> for ContextSummary {
    fn from(b: &ContextBundle) -> Self {
        ContextSummary {
            mode: b.mode,
            strategy: b.strategy,
            budget_tokens: b.budget_tokens,
            tokens: b.token_count(),
            provenance: b.provenance.clone(),
            low_evidence: b.is_empty(),
        }
    }
}

/// One pass of context assembly plus candidate generation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRound {
    pub context: ContextSummary,
    pub candidates: Vec<CandidateAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionTrace {
    pub question_id: String,
    pub qtype: crate::qa::QuestionType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalTrace>,
    pub candidate_rounds: Vec<CandidateRound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<FallbackResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthesis: Option<SynthesizedAnswer>,
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub calls: Vec<CallRecord>,
    pub elapsed_ms: u64,
}

impl QuestionTrace {
    pub fn answered(&self) -> bool {
        self.synthesis.is_some()
    }

    /// The fallback chain was consulted.
    pub fn used_fallback(&self) -> bool {
        self.fallback.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub phase: Phase,
    pub seed: u64,
    pub workers: usize,
    pub question_count: usize,
    pub unanswered: Vec<String>,
    pub questions: Vec<QuestionTrace>,
    pub total_calls: usize,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub submission: Vec<SubmissionEntry>,
    pub manifest: RunManifest,
}

impl RunOutput {
    pub fn failures(&self) -> usize {
        self.manifest.unanswered.len()
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.manifest.questions.iter().flat_map(|q| q.calls.iter().cloned()).collect()
    }

    /// `submission.json`, `manifest.json` and `transcript.jsonl` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        let write_json = |name: &str, value: &serde_json::Value| -> Result<()> {
            let path = dir.join(name);
            let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(name, e))?;
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))
        };
        write_json("submission.json", &submission_json(&self.submission))?;
        write_json("manifest.json", &serde_json::to_value(&self.manifest).map_err(|e| Error::json("manifest", e))?)?;
        let path = dir.join("transcript.jsonl");
        write_transcript(&path, &self.calls()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Everything a run needs, built once from a config.
pub struct Runtime {
    pub config: RunConfig,
    pub config_digest: String,
    pub corpus: Option<Corpus>,
    pub index: Option<Bm25Index>,
    pub templates: Templates,
    pub generator: Binding,
    pub refiner: Binding,
    pub candidates: Vec<Binding>,
    pub synthesizer: Binding,
    pub embedder: Arc<dyn Embedder>,
    pub fallback: Option<FallbackChain>,
}

fn existing(base: &Path, p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = p.as_ref().ok_or_else(|| Error::Config(format!("`{what}` path is required for this phase")))?;
    let p = resolve(base, p);
    if !p.exists() {
        return Err(Error::Config(format!("{what} path {} does not exist", p.display())));
    }
    Ok(p)
}

impl Runtime {
    /// Build bindings and load data for `phase`. With `replay`, every model
    /// binding answers from that transcript.
    pub fn new(loaded: &LoadedConfig, phase: Phase, replay: Option<&Path>) -> Result<Self> {
        let cfg = &loaded.config;
        let base = &loaded.base_dir;
        let corpus = match phase {
            Phase::APlus | Phase::BAbstracts => Some(Corpus::open(existing(base, &cfg.corpus, "corpus")?)?),
            Phase::BSnippets => None,
        };
        let index = match phase {
            Phase::APlus => Some(Bm25Index::load(existing(base, &cfg.index, "index")?)?),
            _ => None,
        };
        let templates = match &cfg.templates_dir {
            Some(d) => Templates::load_dir(&existing(base, &Some(d.clone()), "templates_dir")?)?,
            None => Templates::default(),
        };
        let replay = replay.map(ReplayBackend::from_path).transpose()?.map(Arc::new);
        let m = &cfg.models;
        let generator = build_binding(&m.generator, base, replay.as_ref())?;
        let refiner = match &m.refiner {
            Some(r) => build_binding(r, base, replay.as_ref())?,
            None => generator.clone(),
        };
        let candidates =
            m.candidates.iter().map(|c| build_binding(c, base, replay.as_ref())).collect::<Result<Vec<_>>>()?;
        let synthesizer = build_binding(&m.synthesizer, base, replay.as_ref())?;
        Ok(Runtime {
            config: cfg.clone(),
            config_digest: loaded.digest.clone(),
            corpus,
            index,
            templates,
            generator,
            refiner,
            candidates,
            synthesizer,
            embedder: build_embedder(&cfg.embedder)?,
            fallback: if phase == Phase::APlus { build_fallback(cfg, base)? } else { None },
        })
    }

    fn budget(&self, mode: ContextMode) -> usize {
        let c = &self.config.context;
        match mode {
            ContextMode::RetrievedDocs => c.retrieved_budget,
            ContextMode::ProvidedSnippets => c.snippets_budget,
            ContextMode::FullAbstracts => c.abstracts_budget,
        }
    }

    fn candidate_round(
        &self,
        question: &Question,
        sources: &[Source],
        mode: ContextMode,
        bindings: &[Binding],
    ) -> std::result::Result<(ContextBundle, Vec<CandidateAnswer>), String> {
        let bundle = assemble_context_seeded(
            sources,
            mode,
            self.config.context.strategy,
            self.budget(mode),
            &question.body,
            self.embedder.as_ref(),
            self.config.seed,
        )
        .map_err(|e| e.to_string())?;
        let candidates = generate_candidates(question, &bundle, bindings, &self.templates);
        Ok((bundle, candidates))
    }

    fn run_candidates(
        &self,
        trace: &mut QuestionTrace,
        question: &Question,
        sources: &[Source],
        mode: ContextMode,
        bindings: &[Binding],
    ) -> Vec<CandidateAnswer> {
        match self.candidate_round(question, sources, mode, bindings) {
            Ok((bundle, candidates)) => {
                trace
                    .candidate_rounds
                    .push(CandidateRound { context: (&bundle).into(), candidates: candidates.clone() });
                candidates
            }
            Err(e) => {
                trace.flags.push(format!("context assembly failed: {e}"));
                Vec::new()
            }
        }
    }

    fn sources_from_corpus(&self, ids: impl Iterator<Item = String>, trace: &mut QuestionTrace) -> Vec<Source> {
        let corpus = self.corpus.as_ref().expect("corpus loaded for this phase");
        ids.filter_map(|id| match corpus.get(&id) {
            Ok(d) => Some(Source::new(d.doc_id.clone(), d.title.clone(), d.abstract_text.clone())),
            Err(_) => {
                trace.flags.push(format!("document {id} not in corpus"));
                None
            }
        })
        .collect()
    }

    fn answer(&self, question: &Question, phase: Phase) -> QuestionTrace {
        let start = Instant::now();
        let log = CallLog::new();
        let generator = self.generator.with_log(log.clone());
        let refiner = self.refiner.with_log(log.clone());
        let bindings: Vec<Binding> = self.candidates.iter().map(|b| b.with_log(log.clone())).collect();
        let synthesizer = self.synthesizer.with_log(log.clone());
        let mut trace = QuestionTrace {
            question_id: question.question_id.clone(),
            qtype: question.qtype,
            retrieval: None,
            candidate_rounds: Vec::new(),
            fallback: None,
            synthesis: None,
            flags: Vec::new(),
            error: None,
            calls: Vec::new(),
            elapsed_ms: 0,
        };
        let mode = phase.context_mode();
        let sources: Vec<Source> = match phase {
            Phase::APlus => {
                let retriever = Retriever {
                    index: self.index.as_ref().expect("index loaded for phase A+"),
                    corpus: self.corpus.as_ref().expect("corpus loaded for phase A+"),
                    generator: &generator,
                    refiner: &refiner,
                    embedder: self.embedder.as_ref(),
                    config: self.config.pipeline,
                    templates: &self.templates,
                };
                let r = retriever.retrieve(question);
                let ids: Vec<String> = r.final_docs.iter().map(|d| d.doc_id.clone()).collect();
                trace.retrieval = Some(r);
                self.sources_from_corpus(ids.into_iter(), &mut trace)
            }
            Phase::BSnippets => snippet_sources(question),
            Phase::BAbstracts => {
                let found = self.sources_from_corpus(question.documents.iter().cloned(), &mut trace);
                if found.is_empty() && !question.snippets.is_empty() {
                    trace.flags.push("no referenced abstracts available; using snippets".into());
                    snippet_sources(question)
                } else {
                    found
                }
            }
        };
        let mut candidates = self.run_candidates(&mut trace, question, &sources, mode, &bindings);

        let all_insufficient = candidates.iter().all(|c| c.insufficient);
        if all_insufficient {
            let mut retry_sources = Vec::new();
            if let Some(chain) = self.fallback.as_ref().filter(|_| phase == Phase::APlus) {
                let result = fallback_retrieve(question, chain);
                if result.no_evidence {
                    trace.flags.push("NO_EVIDENCE".into());
                }
                retry_sources = result
                    .texts
                    .iter()
                    .map(|d| Source::new(d.doc_id.clone(), d.title.clone(), d.text.clone()))
                    .collect();
                trace.fallback = Some(result);
            }
            if retry_sources.is_empty() {
                trace.flags.push("question-only answering".into());
            }
            candidates = self.run_candidates(&mut trace, question, &retry_sources, mode, &bindings);
        }

        match synthesize(question, &candidates, &self.config.synthesis, &synthesizer, &self.templates) {
            Ok(a) => trace.synthesis = Some(a),
            Err(e) => trace.error = Some(e.to_string()),
        }
        trace.calls = log.records();
        trace.elapsed_ms = start.elapsed().as_millis() as u64;
        trace
    }

    /// Retrieval traces only, in question order.
    pub fn retrieve_all(&self, questions: &[Question], workers: usize) -> Vec<RetrievalTrace> {
        let retriever = Retriever {
            index: self.index.as_ref().expect("index loaded for phase A+"),
            corpus: self.corpus.as_ref().expect("corpus loaded for phase A+"),
            generator: &self.generator,
            refiner: &self.refiner,
            embedder: self.embedder.as_ref(),
            config: self.config.pipeline,
            templates: &self.templates,
        };
        parallel_map(questions, workers, |q| retriever.retrieve(q))
    }

    /// Answer every question with up to `workers` in parallel. Output order
    /// follows input order.
    pub fn run(&self, questions: &[Question], phase: Phase, workers: usize) -> RunOutput {
        let start = Instant::now();
        let traces = parallel_map(questions, workers, |q| self.answer(q, phase));
        let submission = traces
            .iter()
            .map(|t| SubmissionEntry {
                question_id: t.question_id.clone(),
                qtype: t.qtype,
                answer: t.synthesis.as_ref().map(|s| s.payload.clone()),
            })
            .collect();
        let unanswered = traces.iter().filter(|t| !t.answered()).map(|t| t.question_id.clone()).collect();
        let total_calls = traces.iter().map(|t| t.calls.len()).sum();
        RunOutput {
            submission,
            manifest: RunManifest {
                config_digest: self.config_digest.clone(),
                phase,
                seed: self.config.seed,
                workers,
                question_count: questions.len(),
                unanswered,
                questions: traces,
                total_calls,
                elapsed_ms: start.elapsed().as_millis() as u64,
            },
        }
    }
}

fn snippet_sources(question: &Question) -> Vec<Source> {
    question
        .snippets
        .iter()
        .enumerate()
        .map(|(i, s)| Source::new(s.doc_id.clone().unwrap_or_else(|| format!("snippet-{i}")), "", s.text.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayCheck {
    pub calls: usize,
    pub missing: Vec<String>,
    pub mismatched: Vec<String>,
}

impl ReplayCheck {
    pub fn ok(&self) -> bool {
        self.missing.is_empty() && self.mismatched.is_empty()
    }
}

/// Check that every successful call recorded in a manifest is answered
/// identically by a transcript.
pub fn verify_replay(manifest: &Path, transcript: &Path) -> Result<ReplayCheck> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest.display().to_string(), e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::json(manifest.display().to_string(), e))?;
    let entries = crate::llm::read_transcript(transcript)?;
    let recorded: std::collections::HashMap<&str, &str> =
        entries.iter().map(|e| (e.digest.as_str(), e.response.as_str())).collect();
    let mut check = ReplayCheck { calls: 0, missing: Vec::new(), mismatched: Vec::new() };
    let questions = value.get("questions").and_then(|q| q.as_array()).cloned().unwrap_or_default();
    for q in &questions {
        let calls: Vec<CallRecord> = serde_json::from_value(q.get("calls").cloned().unwrap_or(json!([])))
            .map_err(|e| Error::json("manifest calls", e))?;
        for call in calls {
            let Some(response) = call.response else { continue };
            check.calls += 1;
            match recorded.get(call.digest.as_str()) {
                None => check.missing.push(call.digest),
                Some(r) if *r != response => check.mismatched.push(call.digest),
                Some(_) => {}
            }
        }
    }
    Ok(check)
}
