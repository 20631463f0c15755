//! Accuracy, MRR and list F1, plus BioASQ test set and submission files.
//!
//! Strings match when equal after lowercasing and collapsing whitespace.
//! Questions without a prediction score 0.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::qa::{AnswerPayload, Gold, Question, QuestionType, Snippet, YesNo, MAX_FACTOID_ANSWERS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("EVAL_INPUT_MISMATCH: {reason}: {}", ids.join(", "))]
    InputMismatch { reason: String, ids: Vec<String> },
    #[error("{path}: {field}: {message}")]
    Schema { path: String, field: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn yesno_score(gold: YesNo, pred: Option<YesNo>) -> f64 {
    if pred == Some(gold) {
        1.0
    } else {
        0.0
    }
}

/// `1/r` for the first of the first five predictions matching any synonym.
pub fn reciprocal_rank(gold_synonyms: &[String], pred: &[String]) -> f64 {
    let gold: HashSet<String> = gold_synonyms.iter().map(|s| normalize(s)).collect();
    pred.iter()
        .take(MAX_FACTOID_ANSWERS)
        .position(|p| gold.contains(&normalize(p)))
        .map_or(0.0, |r| 1.0 / (r as f64 + 1.0))
}

/// F1 with each prediction matching at most one gold entity, using a
/// maximum bipartite matching.
pub fn list_f1_score(gold: &[Vec<String>], pred: &[String]) -> f64 {
    if gold.is_empty() || pred.is_empty() {
        return 0.0;
    }
    let gold_sets: Vec<HashSet<String>> = gold.iter().map(|syn| syn.iter().map(|s| normalize(s)).collect()).collect();
    let adj: Vec<Vec<usize>> = pred
        .iter()
        .map(|p| {
            let p = normalize(p);
            gold_sets.iter().enumerate().filter(|(_, g)| g.contains(&p)).map(|(i, _)| i).collect()
        })
        .collect();
    let matched = max_matching(&adj, gold.len());
    if matched == 0 {
        return 0.0;
    }
    let p = matched as f64 / pred.len() as f64;
    let r = matched as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

fn max_matching(adj: &[Vec<usize>], right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; right];
    (0..adj.len()).filter(|&u| augment(u, adj, &mut vec![false; right], &mut owner)).count()
}

fn check_ids<'a>(gold: impl Iterator<Item = &'a str>, pred: impl Iterator<Item = &'a str>) -> Result<(), EvalError> {
    let gold: HashSet<&str> = gold.collect();
    let mut seen = HashSet::new();
    let mut unknown = Vec::new();
    let mut dup = Vec::new();
    for id in pred {
        if !gold.contains(id) {
            unknown.push(id.to_string());
        } else if !seen.insert(id) {
            dup.push(id.to_string());
        }
    }
    if !unknown.is_empty() {
        return Err(EvalError::InputMismatch { reason: "predictions for unknown question ids".into(), ids: unknown });
    }
    if !dup.is_empty() {
        return Err(EvalError::InputMismatch { reason: "duplicate predictions".into(), ids: dup });
    }
    Ok(())
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        0.0
    } else {
        xs.sum::<f64>() / n as f64
    }
}

fn scored<G, P>(
    gold: &[(String, G)],
    pred: &[(String, P)],
    score: impl Fn(&G, Option<&P>) -> f64,
) -> Result<f64, EvalError> {
    check_ids(gold.iter().map(|g| g.0.as_str()), pred.iter().map(|p| p.0.as_str()))?;
    let by_id: HashMap<&str, &P> = pred.iter().map(|(id, p)| (id.as_str(), p)).collect();
    Ok(mean(gold.iter().map(|(id, g)| score(g, by_id.get(id.as_str()).copied()))))
}

/// Fraction of yes/no questions answered correctly.
pub fn accuracy(gold: &[(String, YesNo)], pred: &[(String, YesNo)]) -> Result<f64, EvalError> {
    scored(gold, pred, |g, p| yesno_score(*g, p.copied()))
}

/// Mean reciprocal rank; prediction lists beyond five entries are cut.
pub fn mrr(gold: &[(String, Vec<String>)], pred: &[(String, Vec<String>)]) -> Result<f64, EvalError> {
    for (id, p) in pred {
        if p.len() > MAX_FACTOID_ANSWERS {
            log::warn!("{id}: {} factoid answers, only the first {MAX_FACTOID_ANSWERS} are scored", p.len());
        }
    }
    scored(gold, pred, |g, p| p.map_or(0.0, |p| reciprocal_rank(g, p)))
}

/// Mean per-question F1.
pub fn list_f1(gold: &[(String, Vec<Vec<String>>)], pred: &[(String, Vec<String>)]) -> Result<f64, EvalError> {
    scored(gold, pred, |g, p| p.map_or(0.0, |p| list_f1_score(g, p)))
}

pub fn metric_name(qtype: QuestionType) -> &'static str {
    match qtype {
        QuestionType::Yesno => "accuracy",
        QuestionType::Factoid => "mrr",
        QuestionType::List => "mean_f1",
    }
}

/// One answer in a submission; `answer` is `None` for unanswered questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubmissionEntry {
    pub question_id: String,
    pub qtype: QuestionType,
    pub answer: Option<AnswerPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeScore {
    pub metric: String,
    pub value: f64,
    pub n_questions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionScore {
    pub question_id: String,
    pub qtype: QuestionType,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_type: BTreeMap<QuestionType, TypeScore>,
    pub per_question: Vec<QuestionScore>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:<9} {:>8} {:>5}", "type", "metric", "value", "n");
        for (q, s) in &self.per_type {
            let _ = writeln!(out, "{:<8} {:<9} {:>8.4} {:>5}", q.as_str(), s.metric, s.value, s.n_questions);
        }
        out
    }
}

/// Score a submission against questions carrying gold answers.
pub fn evaluate(gold: &[Question], pred: &[SubmissionEntry]) -> Result<EvalReport, EvalError> {
    check_ids(gold.iter().map(|q| q.question_id.as_str()), pred.iter().map(|p| p.question_id.as_str()))?;
    let by_id: HashMap<&str, &SubmissionEntry> = pred.iter().map(|p| (p.question_id.as_str(), p)).collect();
    let type_clash: Vec<String> = gold
        .iter()
        .filter(|q| by_id.get(q.question_id.as_str()).is_some_and(|p| p.qtype != q.qtype))
        .map(|q| q.question_id.clone())
        .collect();
    if !type_clash.is_empty() {
        return Err(EvalError::InputMismatch { reason: "question type differs from gold".into(), ids: type_clash });
    }
    let mut warnings = Vec::new();
    let mut per_question = Vec::new();
    for q in gold {
        let Some(g) = &q.gold else {
            warnings.push(format!("{}: no gold answer, skipped", q.question_id));
            continue;
        };
        let answer = by_id.get(q.question_id.as_str()).and_then(|p| p.answer.as_ref());
        let score = match (g, answer) {
            (Gold::Yesno(g), Some(AnswerPayload::Yesno(p))) => yesno_score(*g, Some(*p)),
            (Gold::Factoid(g), Some(AnswerPayload::Factoid(p))) => {
                if p.len() > MAX_FACTOID_ANSWERS {
                    warnings.push(format!("{}: {} factoid answers truncated to 5", q.question_id, p.len()));
                }
                reciprocal_rank(g, p)
            }
            (Gold::List(g), Some(AnswerPayload::List(p))) => list_f1_score(g, p),
            _ => 0.0,
        };
        per_question.push(QuestionScore { question_id: q.question_id.clone(), qtype: q.qtype, score });
    }
    let mut per_type = BTreeMap::new();
    for qtype in QuestionType::ALL {
        let scores: Vec<f64> = per_question.iter().filter(|s| s.qtype == qtype).map(|s| s.score).collect();
        if !scores.is_empty() {
            let n = scores.len();
            per_type.insert(
                qtype,
                TypeScore { metric: metric_name(qtype).into(), value: mean(scores.into_iter()), n_questions: n },
            );
        }
    }
    Ok(EvalReport { per_type, per_question, warnings })
}

fn schema(path: &Path, field: impl Into<String>, message: impl Into<String>) -> EvalError {
    EvalError::Schema { path: path.display().to_string(), field: field.into(), message: message.into() }
}

fn read_json(path: &Path) -> Result<Value, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| EvalError::Io { path: path.display().to_string(), message: e.to_string() })?;
    serde_json::from_str(&text).map_err(|e| schema(path, "<root>", e.to_string()))
}

fn questions_array<'a>(path: &Path, root: &'a Value) -> Result<&'a Vec<Value>, EvalError> {
    root.get("questions").and_then(Value::as_array).ok_or_else(|| schema(path, "questions", "missing or not an array"))
}

fn str_field<'a>(path: &Path, at: &str, q: &'a Value, name: &str) -> Result<&'a str, EvalError> {
    match q.get(name) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(schema(path, format!("{at}.{name}"), "expected a string")),
        None => Err(schema(path, format!("{at}.{name}"), "missing field")),
    }
}

/// `.../pubmed/12345` → `12345`; anything without a slash is kept.
pub fn doc_id_from_url(url: &str) -> String {
    url.trim_end_matches('/').rsplit('/').next().unwrap_or(url).to_string()
}

fn string_list(v: &Value) -> Option<Vec<String>> {
    v.as_array()?.iter().map(|s| s.as_str().map(str::to_string)).collect()
}

/// Gold synonyms for a factoid: `["a", "b"]` or `[["a", "b"], ...]`
/// (nested lists flattened).
fn factoid_synonyms(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(vec![s.clone()]),
        Value::Array(items) => {
            let mut out = Vec::new();
            for item in items {
                match item {
                    Value::String(s) => out.push(s.clone()),
                    Value::Array(_) => out.extend(string_list(item)?),
                    _ => return None,
                }
            }
            Some(out)
        }
        _ => None,
    }
}

fn entity_lists(v: &Value) -> Option<Vec<Vec<String>>> {
    v.as_array()?
        .iter()
        .map(|item| match item {
            Value::String(s) => Some(vec![s.clone()]),
            other => string_list(other),
        })
        .collect()
}

fn parse_gold(path: &Path, at: &str, qtype: QuestionType, v: &Value) -> Result<Gold, EvalError> {
    let bad = || schema(path, format!("{at}.exact_answer"), format!("does not fit a {qtype} question"));
    match qtype {
        QuestionType::Yesno => v.as_str().and_then(YesNo::parse).map(Gold::Yesno).ok_or_else(bad),
        QuestionType::Factoid => factoid_synonyms(v).map(Gold::Factoid).ok_or_else(bad),
        QuestionType::List => entity_lists(v).map(Gold::List).ok_or_else(bad),
    }
}

/// Read a BioASQ test set (`{"questions": [...]}`); `exact_answer`, when
/// present, becomes the gold answer. Summary questions are skipped.
pub fn load_testset(path: &Path) -> Result<Vec<Question>, EvalError> {
    let root = read_json(path)?;
    let mut out = Vec::new();
    for (i, q) in questions_array(path, &root)?.iter().enumerate() {
        let at = format!("questions[{i}]");
        let id = str_field(path, &at, q, "id")?;
        let type_name = str_field(path, &at, q, "type")?;
        if type_name == "summary" {
            log::info!("{id}: summary question skipped");
            continue;
        }
        let qtype = QuestionType::parse(type_name)
            .ok_or_else(|| schema(path, format!("{at}.type"), format!("unknown question type {type_name:?}")))?;
        let body = str_field(path, &at, q, "body")?;
        let gold = match q.get("exact_answer") {
            None | Some(Value::Null) => None,
            Some(v) => Some(parse_gold(path, &at, qtype, v)?),
        };
        let mut snippets = Vec::new();
        if let Some(list) = q.get("snippets") {
            let list = list.as_array().ok_or_else(|| schema(path, format!("{at}.snippets"), "expected an array"))?;
            for (j, s) in list.iter().enumerate() {
                let sat = format!("{at}.snippets[{j}]");
                let text = str_field(path, &sat, s, "text")?.to_string();
                let doc_id = s.get("document").and_then(Value::as_str).map(doc_id_from_url);
                snippets.push(Snippet { doc_id, text });
            }
        }
        let documents = match q.get("documents") {
            None => Vec::new(),
            Some(v) => string_list(v)
                .ok_or_else(|| schema(path, format!("{at}.documents"), "expected an array of strings"))?
                .iter()
                .map(|u| doc_id_from_url(u))
                .collect(),
        };
        out.push(Question { question_id: id.to_string(), qtype, body: body.to_string(), gold, snippets, documents });
    }
    Ok(out)
}

fn exact_answer_json(answer: &AnswerPayload) -> Value {
    match answer {
        AnswerPayload::Yesno(v) => json!(v.as_str()),
        AnswerPayload::Factoid(items) | AnswerPayload::List(items) => {
            Value::Array(items.iter().map(|s| json!([s])).collect())
        }
    }
}

/// Submission JSON, questions in the given order.
pub fn submission_json(entries: &[SubmissionEntry]) -> Value {
    let questions: Vec<Value> = entries
        .iter()
        .map(|e| {
            let mut m = Map::new();
            m.insert("id".into(), json!(e.question_id));
            m.insert("type".into(), json!(e.qtype.as_str()));
            if let Some(a) = &e.answer {
                m.insert("exact_answer".into(), exact_answer_json(a));
            }
            Value::Object(m)
        })
        .collect();
    json!({ "questions": questions })
}

pub fn write_submission(entries: &[SubmissionEntry], path: &Path) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(&submission_json(entries)).expect("submission serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| EvalError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Read a submission. Factoid and list answers may be flat strings or
/// synonym lists; the first synonym of each entry is kept.
pub fn load_submission(path: &Path) -> Result<Vec<SubmissionEntry>, EvalError> {
    let root = read_json(path)?;
    let mut out = Vec::new();
    for (i, q) in questions_array(path, &root)?.iter().enumerate() {
        let at = format!("questions[{i}]");
        let id = str_field(path, &at, q, "id")?;
        let type_name = str_field(path, &at, q, "type")?;
        let qtype = QuestionType::parse(type_name)
            .ok_or_else(|| schema(path, format!("{at}.type"), format!("unknown question type {type_name:?}")))?;
        let bad = || schema(path, format!("{at}.exact_answer"), format!("does not fit a {qtype} question"));
        let answer = match q.get("exact_answer") {
            None | Some(Value::Null) => None,
            Some(v) => Some(match qtype {
                QuestionType::Yesno => AnswerPayload::Yesno(v.as_str().and_then(YesNo::parse).ok_or_else(bad)?),
                QuestionType::Factoid | QuestionType::List => {
                    let items: Vec<String> =
                        entity_lists(v).ok_or_else(bad)?.into_iter().filter_map(|syn| syn.into_iter().next()).collect();
                    if qtype == QuestionType::Factoid {
                        AnswerPayload::Factoid(items)
                    } else {
                        AnswerPayload::List(items)
                    }
                }
            }),
        };
        out.push(SubmissionEntry { question_id: id.to_string(), qtype, answer });
    }
    Ok(out)
}
