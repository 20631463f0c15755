//! Recover typed answers from free-form model output.
//!
//! Prompts ask the model to finish with one fenced JSON block. The last
//! fenced block is tried first; when it is missing or unusable the parser
//! falls back to pattern extraction on the prose.

use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;
use serde_json::Value;

use super::GatewayError;
use crate::qa::{YesNo, MAX_FACTOID_ANSWERS};

const MAX_ITEM_CHARS: usize = 200;

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[ \t]*\r?\n?(.*?)```").expect("valid regex"));
static LIST_ITEM: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]|\d+[.)])\s+(.+?)\s*$").expect("valid regex"));
static CONFIDENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)"?confidence"?\s*[:=]\s*"?(-?[0-9]*\.?[0-9]+)"#).expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputShape {
    YesNo,
    FactoidList,
    List,
    SynthesisRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisRecord {
    /// Raw answer payload; its shape is interpreted by the caller per
    /// question type.
    pub answer: Value,
    pub confidence: f64,
    pub justification: String,
    /// Set when the reported confidence was outside [0, 1].
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Structured {
    YesNo(YesNo),
    Factoid(Vec<String>),
    List(Vec<String>),
    Synthesis(SynthesisRecord),
}

fn malformed(reason: impl Into<String>, raw: &str) -> GatewayError {
    GatewayError::MalformedOutput { reason: reason.into(), raw: raw.to_string() }
}

fn last_fenced_json(text: &str) -> Option<Value> {
    FENCE.captures_iter(text).filter_map(|c| serde_json::from_str::<Value>(c.get(1)?.as_str().trim()).ok()).last()
}

/// The last balanced `{...}` span in the text that parses as a JSON object.
fn last_bare_object(text: &str) -> Option<Value> {
    let bytes = text.as_bytes();
    let mut end = text.len();
    while let Some(close) = text[..end].rfind('}') {
        let mut depth = 0i32;
        let mut start = None;
        for i in (0..=close).rev() {
            match bytes[i] {
                b'}' => depth += 1,
                b'{' => {
                    depth -= 1;
                    if depth == 0 {
                        start = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&text[s..=close]) {
                return Some(v);
            }
        }
        end = close;
    }
    None
}

fn strip_markup(line: &str) -> String {
    line.trim()
        .trim_start_matches(['#', '>', '*', '_', '`', '"', '\'', ' '])
        .replace(['*', '_', '`'], "")
        .trim()
        .to_string()
}

pub(crate) fn yes_no_from_text(text: &str) -> Option<YesNo> {
    let line = text.lines().map(strip_markup).find(|l| !l.is_empty())?;
    let lower = line.to_lowercase();
    let lower = lower.strip_prefix("answer:").unwrap_or(&lower).trim_start();
    let word: String = lower.chars().take_while(|c| c.is_alphabetic()).collect();
    match word.as_str() {
        "yes" => Some(YesNo::Yes),
        "no" => Some(YesNo::No),
        _ => None,
    }
}

fn answer_field(v: &Value) -> Option<&Value> {
    match v {
        Value::Object(map) => map.get("answer").or_else(|| map.get("exact_answer")),
        other => Some(other),
    }
}

/// Flatten a JSON answer value into strings: a string, a list of strings, or
/// a list of synonym lists (first synonym kept).
pub(crate) fn strings_from_value(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(vec![s.clone()]),
        Value::Array(items) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => Some(s.clone()),
                Value::Array(syn) => syn.first().and_then(Value::as_str).map(str::to_string),
                Value::Number(n) => Some(n.to_string()),
                _ => None,
            })
            .collect(),
        _ => None,
    }
}

fn clean_items(items: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for item in items {
        let item = strip_markup(&item).trim_end_matches(['.', ';', ',']).trim().to_string();
        if item.is_empty() || item.chars().count() > MAX_ITEM_CHARS {
            continue;
        }
        if !out.iter().any(|o| o.eq_ignore_ascii_case(&item)) {
            out.push(item);
        }
    }
    out
}

fn items_from_prose(text: &str) -> Vec<String> {
    let bulleted: Vec<String> = text.lines().filter_map(|l| LIST_ITEM.captures(l).map(|c| c[1].to_string())).collect();
    if !bulleted.is_empty() {
        return bulleted;
    }
    let first = text.lines().map(strip_markup).find(|l| !l.is_empty()).unwrap_or_default();
    first.split([';', ',']).map(str::to_string).collect()
}

fn parse_items(text: &str) -> Vec<String> {
    if let Some(items) = last_fenced_json(text).as_ref().and_then(answer_field).and_then(strings_from_value) {
        let cleaned = clean_items(items);
        if !cleaned.is_empty() {
            return cleaned;
        }
    }
    clean_items(items_from_prose(text))
}

fn parse_confidence(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn synthesis_from_object(obj: &Value) -> Option<SynthesisRecord> {
    let map = obj.as_object()?;
    let answer = map.get("answer").or_else(|| map.get("exact_answer"))?.clone();
    let confidence = parse_confidence(map.get("confidence")?)?;
    if !confidence.is_finite() {
        return None;
    }
    let justification = map.get("justification").and_then(Value::as_str).unwrap_or_default().to_string();
    let clamped = !(0.0..=1.0).contains(&confidence);
    Some(SynthesisRecord { answer, confidence: confidence.clamp(0.0, 1.0), justification, clamped })
}

fn parse_synthesis(text: &str) -> Option<SynthesisRecord> {
    if let Some(rec) = last_fenced_json(text).as_ref().and_then(synthesis_from_object) {
        return Some(rec);
    }
    if let Some(rec) = last_bare_object(text).as_ref().and_then(synthesis_from_object) {
        return Some(rec);
    }
    // Prose fallback: "Answer: yes ... Confidence: 0.8".
    let conf: f64 = CONFIDENCE.captures(text)?[1].parse().ok()?;
    let answer_line = text.lines().find_map(|l| {
        let s = strip_markup(l);
        let lower = s.to_lowercase();
        lower.starts_with("answer:").then(|| s["answer:".len()..].trim().to_string())
    })?;
    Some(SynthesisRecord {
        answer: Value::String(answer_line),
        confidence: conf.clamp(0.0, 1.0),
        justification: String::new(),
        clamped: !(0.0..=1.0).contains(&conf),
    })
}

pub fn parse_structured_output(text: &str, shape: OutputShape) -> Result<Structured, GatewayError> {
    match shape {
        OutputShape::YesNo => {
            let from_block = last_fenced_json(text)
                .as_ref()
                .and_then(answer_field)
                .and_then(Value::as_str)
                .and_then(yes_no_from_text);
            from_block
                .or_else(|| yes_no_from_text(text))
                .map(Structured::YesNo)
                .ok_or_else(|| malformed("no yes/no answer found", text))
        }
        OutputShape::FactoidList => {
            let mut items = parse_items(text);
            if items.is_empty() {
                return Err(malformed("no factoid answers found", text));
            }
            items.truncate(MAX_FACTOID_ANSWERS);
            Ok(Structured::Factoid(items))
        }
        OutputShape::List => {
            let items = parse_items(text);
            if items.is_empty() {
                return Err(malformed("no list entities found", text));
            }
            Ok(Structured::List(items))
        }
        OutputShape::SynthesisRecord => parse_synthesis(text)
            .map(Structured::Synthesis)
            .ok_or_else(|| malformed("no synthesis record with answer and confidence", text)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn parse(text: &str, shape: OutputShape) -> Result<Structured, GatewayError> {
        parse_structured_output(text, shape)
    }

    #[test]
    fn yes_prefix() {
        assert_eq!(parse("Yes, because...", OutputShape::YesNo).unwrap(), Structured::YesNo(YesNo::Yes));
        assert_eq!(parse("**No.** The trial showed", OutputShape::YesNo).unwrap(), Structured::YesNo(YesNo::No));
        assert_eq!(parse("Answer: yes", OutputShape::YesNo).unwrap(), Structured::YesNo(YesNo::Yes));
    }

    #[test]
    fn maybe_is_malformed() {
        assert!(matches!(parse("maybe", OutputShape::YesNo), Err(GatewayError::MalformedOutput { .. })));
        assert!(parse("Nothing conclusive", OutputShape::YesNo).is_err());
    }

    #[test]
    fn fenced_block_wins_over_prose() {
        let text = "I think no at first.\n```json\n{\"answer\": \"yes\"}\n```";
        assert_eq!(parse(text, OutputShape::YesNo).unwrap(), Structured::YesNo(YesNo::Yes));
    }

    #[test]
    fn synthesis_record_from_fence() {
        let text =
            "Reasoning here.\n```json\n{\"answer\":\"yes\",\"confidence\":0.9,\"justification\":\"both agree\"}\n```";
        let Structured::Synthesis(rec) = parse(text, OutputShape::SynthesisRecord).unwrap() else { panic!() };
        assert_eq!(rec.answer, json!("yes"));
        assert_eq!(rec.confidence, 0.9);
        assert_eq!(rec.justification, "both agree");
        assert!(!rec.clamped);
    }

    #[test]
    fn synthesis_confidence_clamped() {
        let text = "```\n{\"answer\":[\"a\"],\"confidence\":1.7}\n```";
        let Structured::Synthesis(rec) = parse(text, OutputShape::SynthesisRecord).unwrap() else { panic!() };
        assert_eq!(rec.confidence, 1.0);
        assert!(rec.clamped);
    }

    #[test]
    fn synthesis_bare_object_and_prose() {
        let text = "Result: {\"answer\": \"no\", \"confidence\": \"0.4\"} end";
        let Structured::Synthesis(rec) = parse(text, OutputShape::SynthesisRecord).unwrap() else { panic!() };
        assert_eq!((rec.answer, rec.confidence), (json!("no"), 0.4));
        let text = "Answer: yes\nConfidence: 0.75";
        let Structured::Synthesis(rec) = parse(text, OutputShape::SynthesisRecord).unwrap() else { panic!() };
        assert_eq!((rec.answer, rec.confidence), (json!("yes"), 0.75));
        assert!(parse("no record here", OutputShape::SynthesisRecord).is_err());
    }

    #[test]
    fn factoid_list_capped_at_five() {
        let text = "```json\n{\"answer\": [\"a\",\"b\",\"c\",\"d\",\"e\",\"f\"]}\n```";
        assert_eq!(
            parse(text, OutputShape::FactoidList).unwrap(),
            Structured::Factoid(vec!["a".into(), "b".into(), "c".into(), "d".into(), "e".into()])
        );
    }

    #[test]
    fn list_from_bullets_and_commas() {
        let text = "The genes are:\n- BRCA1\n- BRCA2\n";
        assert_eq!(parse(text, OutputShape::List).unwrap(), Structured::List(vec!["BRCA1".into(), "BRCA2".into()]));
        assert_eq!(
            parse("TP53, KRAS; EGFR", OutputShape::List).unwrap(),
            Structured::List(vec!["TP53".into(), "KRAS".into(), "EGFR".into()])
        );
        assert_eq!(
            parse("```json\n{\"answer\": [[\"TNF\", \"TNF-alpha\"], [\"IL6\"]]}\n```", OutputShape::List).unwrap(),
            Structured::List(vec!["TNF".into(), "IL6".into()])
        );
    }
}
