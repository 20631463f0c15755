//! Merge candidate answers into one, with a confidence gate.
//!
//! The synthesizer returns an answer and a confidence. Below the threshold
//! the same prompt is re-run once at the retry temperature and that second
//! result is final.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::structured::{strings_from_value, yes_no_from_text};
use crate::llm::{parse_structured_output, Binding, GatewayError, OutputShape, Structured, SynthesisRecord};
use crate::prompts::{fill, Templates};
use crate::qa::{
    repair_prompt, AnswerPayload, CandidateAnswer, Question, QuestionType, MAX_FACTOID_ANSWERS, MAX_OUTPUT_TOKENS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error("no usable candidate answers for {question_id}")]
    NoCandidates { question_id: String },
    #[error("SYNTHESIS_FAILED for {question_id}: {reason}")]
    Failed { question_id: String, reason: String },
    #[error("invalid synthesis config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_first")]
    pub first_temperature: f64,
    #[serde(default)]
    pub retry_temperature: f64,
    /// Skip the model when all yes/no candidates agree.
    #[serde(default = "default_true")]
    pub majority_shortcut: bool,
}

fn default_threshold() -> f64 {
    0.5
}
fn default_first() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig { threshold: 0.5, first_temperature: 0.1, retry_temperature: 0.0, majority_shortcut: true }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let ordered = 0.0 <= self.retry_temperature
            && self.retry_temperature <= self.first_temperature
            && self.first_temperature <= 1.0;
        if !ordered {
            return Err(SynthesisError::Config("need 0 <= retry_temperature <= first_temperature <= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(SynthesisError::Config("threshold must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesizedAnswer {
    pub question_id: String,
    pub qtype: QuestionType,
    pub payload: AnswerPayload,
    pub confidence: f64,
    /// 0 when the majority shortcut answered without a model call.
    pub synthesis_rounds: u8,
    pub temperature_used: f64,
    pub contributing_models: Vec<String>,
    pub justification: String,
    pub shortcut: bool,
    /// The model reported a confidence outside [0, 1].
    pub clamped: bool,
    /// The low-confidence re-run failed and the first answer was kept.
    pub retry_failed: bool,
    /// Rounds that needed a repair reissue.
    pub repairs: u8,
}

/// Unanimous yes/no among usable candidates; `None` otherwise and for every
/// other question type.
pub fn majority_shortcut(candidates: &[CandidateAnswer]) -> Option<AnswerPayload> {
    let mut usable = candidates.iter().filter(|c| !c.insufficient).filter_map(|c| c.payload.as_ref());
    let first = usable.next()?;
    if !matches!(first, AnswerPayload::Yesno(_)) {
        return None;
    }
    usable.all(|p| p == first).then(|| first.clone())
}

fn format_instructions(qtype: QuestionType) -> &'static str {
    match qtype {
        QuestionType::Yesno => "The answer must be the string \"yes\" or \"no\".",
        QuestionType::Factoid => "The answer must be a JSON array of up to 5 short strings, best first.",
        QuestionType::List => "The answer must be a JSON array of entity names.",
    }
}

pub fn synthesis_user_prompt(question: &Question, candidates: &[&CandidateAnswer], templates: &Templates) -> String {
    let blocks: Vec<String> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let payload = c.payload.as_ref().map_or_else(|| "null".to_string(), AnswerPayload::to_json);
            format!("[{}] model {}\nanswer: {payload}\nfull response:\n{}", i + 1, c.model_id, c.raw_text.trim())
        })
        .collect();
    fill(
        &templates.synthesis,
        &[
            ("qtype", question.qtype.as_str()),
            ("question", &question.body),
            ("candidates", &blocks.join("\n\n")),
            ("format", format_instructions(question.qtype)),
        ],
    )
}

/// Interpret a synthesis record's answer for the question type.
fn payload_from_record(qtype: QuestionType, rec: &SynthesisRecord) -> Option<AnswerPayload> {
    match qtype {
        QuestionType::Yesno => rec.answer.as_str().and_then(yes_no_from_text).map(AnswerPayload::Yesno),
        QuestionType::Factoid => {
            let mut items: Vec<String> =
                strings_from_value(&rec.answer)?.into_iter().filter(|s| !s.trim().is_empty()).collect();
            items.truncate(MAX_FACTOID_ANSWERS);
            (!items.is_empty()).then_some(AnswerPayload::Factoid(items))
        }
        QuestionType::List => {
            let items: Vec<String> =
                strings_from_value(&rec.answer)?.into_iter().filter(|s| !s.trim().is_empty()).collect();
            (!items.is_empty()).then_some(AnswerPayload::List(items))
        }
    }
}

struct Round {
    payload: AnswerPayload,
    record: SynthesisRecord,
    repaired: bool,
}

fn run_round(
    question: &Question,
    user: &str,
    temperature: f64,
    binding: &Binding,
    templates: &Templates,
) -> Result<Round, String> {
    let mut req = binding.request(&templates.synthesis_system, user, temperature, MAX_OUTPUT_TOKENS);
    let mut last = String::new();
    for attempt in 0..2 {
        let text = binding.complete(&req).map_err(|e| e.to_string())?.text;
        let parsed = match parse_structured_output(&text, OutputShape::SynthesisRecord) {
            Ok(Structured::Synthesis(rec)) => payload_from_record(question.qtype, &rec)
                .map(|payload| (payload, rec))
                .ok_or_else(|| GatewayError::MalformedOutput {
                    reason: format!("answer does not fit a {} question", question.qtype),
                    raw: text.clone(),
                }),
            Ok(_) => unreachable!("synthesis shape yields a synthesis record"),
            Err(e) => Err(e),
        };
        match parsed {
            Ok((payload, record)) => return Ok(Round { payload, record, repaired: attempt > 0 }),
            Err(e) => {
                last = e.to_string();
                req.user_prompt = repair_prompt(user, templates);
            }
        }
    }
    Err(last)
}

/// Merge `candidates` for `question`. Insufficient candidates are ignored.
pub fn synthesize(
    question: &Question,
    candidates: &[CandidateAnswer],
    config: &SynthesisConfig,
    binding: &Binding,
    templates: &Templates,
) -> Result<SynthesizedAnswer, SynthesisError> {
    config.validate()?;
    let usable: Vec<&CandidateAnswer> = candidates.iter().filter(|c| !c.insufficient && c.payload.is_some()).collect();
    if usable.is_empty() {
        return Err(SynthesisError::NoCandidates { question_id: question.question_id.clone() });
    }
    let contributing_models: Vec<String> = usable.iter().map(|c| c.model_id.clone()).collect();
    let mut answer = SynthesizedAnswer {
        question_id: question.question_id.clone(),
        qtype: question.qtype,
        payload: AnswerPayload::Yesno(crate::qa::YesNo::No),
        confidence: 1.0,
        synthesis_rounds: 0,
        temperature_used: config.first_temperature,
        contributing_models,
        justification: String::new(),
        shortcut: false,
        clamped: false,
        retry_failed: false,
        repairs: 0,
    };
    if config.majority_shortcut && question.qtype == QuestionType::Yesno {
        if let Some(payload) = majority_shortcut(candidates) {
            answer.payload = payload;
            answer.shortcut = true;
            answer.justification = "all candidates agree".into();
            return Ok(answer);
        }
    }

    let user = synthesis_user_prompt(question, &usable, templates);
    let apply = |answer: &mut SynthesizedAnswer, round: Round, rounds: u8, temperature: f64| {
        answer.payload = round.payload;
        answer.confidence = round.record.confidence;
        answer.justification = round.record.justification;
        answer.clamped = round.record.clamped;
        answer.synthesis_rounds = rounds;
        answer.temperature_used = temperature;
        answer.repairs += u8::from(round.repaired);
    };
    match run_round(question, &user, config.first_temperature, binding, templates) {
        Ok(first) if first.record.confidence >= config.threshold => {
            apply(&mut answer, first, 1, config.first_temperature);
            Ok(answer)
        }
        Ok(first) => match run_round(question, &user, config.retry_temperature, binding, templates) {
            Ok(second) => {
                answer.repairs = u8::from(first.repaired);
                apply(&mut answer, second, 2, config.retry_temperature);
                Ok(answer)
            }
            Err(reason) => {
                log::warn!("{}: low-confidence re-run failed ({reason}); keeping first answer", question.question_id);
                apply(&mut answer, first, 2, config.first_temperature);
                answer.retry_failed = true;
                Ok(answer)
            }
        },
        Err(first_reason) => match run_round(question, &user, config.retry_temperature, binding, templates) {
            Ok(second) => {
                answer.repairs = 1;
                apply(&mut answer, second, 2, config.retry_temperature);
                Ok(answer)
            }
            Err(reason) => Err(SynthesisError::Failed {
                question_id: question.question_id.clone(),
                reason: format!("round 1: {first_reason}; round 2: {reason}"),
            }),
        },
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::llm::{CallLog, ScriptRule, ScriptedBackend};
    use crate::qa::YesNo;

    fn cand(model: &str, payload: AnswerPayload) -> CandidateAnswer {
        CandidateAnswer {
            question_id: "q".into(),
            model_id: model.into(),
            qtype: payload.qtype(),
            payload: Some(payload),
            raw_text: "raw".into(),
            insufficient: false,
            repaired: false,
            error: None,
        }
    }

    fn record(answer: &str, confidence: f64) -> String {
        format!("```json\n{{\"answer\": {answer}, \"confidence\": {confidence}, \"justification\": \"j\"}}\n```")
    }

    fn binding(first: &str, retry: &str, log: &CallLog) -> Binding {
        let backend = ScriptedBackend::new()
            .with_rule(ScriptRule { temperature: Some(0.1), response: first.into(), ..Default::default() })
            .with_rule(ScriptRule { temperature: Some(0.0), response: retry.into(), ..Default::default() });
        Binding::new("synth", Arc::new(backend)).with_log(log.clone())
    }

    fn yes_no_split() -> Vec<CandidateAnswer> {
        vec![cand("a", AnswerPayload::Yesno(YesNo::Yes)), cand("b", AnswerPayload::Yesno(YesNo::No))]
    }

    #[test]
    fn shortcut_rules() {
        let yes = AnswerPayload::Yesno(YesNo::Yes);
        let no = AnswerPayload::Yesno(YesNo::No);
        assert_eq!(majority_shortcut(&[cand("a", yes.clone()), cand("b", yes.clone())]), Some(yes.clone()));
        assert_eq!(majority_shortcut(&[cand("a", yes.clone()), cand("b", no), cand("c", yes)]), None);
        let f = AnswerPayload::Factoid(vec!["x".into()]);
        assert_eq!(majority_shortcut(&[cand("a", f.clone()), cand("b", f)]), None);
    }

    #[test]
    fn unanimous_makes_no_call() {
        let log = CallLog::new();
        let q = Question::new("q", QuestionType::Yesno, "?");
        let c = vec![cand("a", AnswerPayload::Yesno(YesNo::Yes)); 3];
        let a = synthesize(&q, &c, &SynthesisConfig::default(), &binding("", "", &log), &Templates::default()).unwrap();
        assert!(a.shortcut);
        assert_eq!((a.confidence, a.synthesis_rounds), (1.0, 0));
        assert!(log.is_empty());
    }

    #[test]
    fn high_confidence_single_round() {
        let log = CallLog::new();
        let q = Question::new("q", QuestionType::Yesno, "?");
        let b = binding(&record("\"yes\"", 0.9), &record("\"no\"", 0.9), &log);
        let a = synthesize(&q, &yes_no_split(), &SynthesisConfig::default(), &b, &Templates::default()).unwrap();
        assert_eq!((a.synthesis_rounds, a.temperature_used), (1, 0.1));
        assert_eq!(a.payload, AnswerPayload::Yesno(YesNo::Yes));
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn low_confidence_retry_is_final() {
        let log = CallLog::new();
        let q = Question::new("q", QuestionType::Yesno, "?");
        let b = binding(&record("\"yes\"", 0.4), &record("\"no\"", 0.3), &log);
        let a = synthesize(&q, &yes_no_split(), &SynthesisConfig::default(), &b, &Templates::default()).unwrap();
        assert_eq!((a.synthesis_rounds, a.temperature_used, a.confidence), (2, 0.0, 0.3));
        assert_eq!(a.payload, AnswerPayload::Yesno(YesNo::No));
        assert_eq!(log.records().iter().map(|r| r.temperature).collect::<Vec<_>>(), [0.1, 0.0]);
    }

    #[test]
    fn threshold_is_strict() {
        let log = CallLog::new();
        let q = Question::new("q", QuestionType::Yesno, "?");
        let b = binding(&record("\"yes\"", 0.5), &record("\"no\"", 0.3), &log);
        let a = synthesize(&q, &yes_no_split(), &SynthesisConfig::default(), &b, &Templates::default()).unwrap();
        assert_eq!(a.synthesis_rounds, 1);
    }

    #[test]
    fn singleton_echo_and_failure() {
        let log = CallLog::new();
        let q = Question::new("q", QuestionType::Factoid, "?");
        let c = [cand("a", AnswerPayload::Factoid(vec!["TP53".into()]))];
        let b = binding(&record("[\"TP53\"]", 0.8), "", &log);
        let a = synthesize(&q, &c, &SynthesisConfig::default(), &b, &Templates::default()).unwrap();
        assert_eq!(a.payload, c[0].payload.clone().unwrap());

        let bad = binding("garbage", "still garbage", &log);
        let err = synthesize(&q, &c, &SynthesisConfig::default(), &bad, &Templates::default()).unwrap_err();
        assert!(err.to_string().starts_with("SYNTHESIS_FAILED"));
    }
}
