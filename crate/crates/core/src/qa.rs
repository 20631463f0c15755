//! Questions, answers and candidate generation across a model ensemble.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::context::ContextBundle;
use crate::llm::{parse_structured_output, Binding, ChatRequest, GatewayError, OutputShape, Structured};
use crate::prompts::{fill, Templates, INSUFFICIENT_EVIDENCE};

pub const MAX_FACTOID_ANSWERS: usize = 5;
pub const CANDIDATE_TEMPERATURE: f64 = 0.1;
pub const MAX_OUTPUT_TOKENS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Yesno,
    Factoid,
    List,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [QuestionType::Yesno, QuestionType::Factoid, QuestionType::List];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Yesno => "yesno",
            QuestionType::Factoid => "factoid",
            QuestionType::List => "list",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        QuestionType::ALL.into_iter().find(|q| q.as_str() == s)
    }

    pub fn shape(self) -> OutputShape {
        match self {
            QuestionType::Yesno => OutputShape::YesNo,
            QuestionType::Factoid => OutputShape::FactoidList,
            QuestionType::List => OutputShape::List,
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn as_str(self) -> &'static str {
        match self {
            YesNo::Yes => "yes",
            YesNo::No => "no",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "yes" => Some(YesNo::Yes),
            "no" => Some(YesNo::No),
            _ => None,
        }
    }
}

/// An answer in the shape its question type requires.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerPayload {
    Yesno(YesNo),
    /// Ranked, at most [`MAX_FACTOID_ANSWERS`].
    Factoid(Vec<String>),
    List(Vec<String>),
}

impl AnswerPayload {
    pub fn qtype(&self) -> QuestionType {
        match self {
            AnswerPayload::Yesno(_) => QuestionType::Yesno,
            AnswerPayload::Factoid(_) => QuestionType::Factoid,
            AnswerPayload::List(_) => QuestionType::List,
        }
    }

    /// Compact rendering used inside prompts.
    pub fn to_json(&self) -> String {
        match self {
            AnswerPayload::Yesno(v) => serde_json::to_string(v.as_str()),
            AnswerPayload::Factoid(v) | AnswerPayload::List(v) => serde_json::to_string(v),
        }
        .expect("payload serializes")
    }

    pub(crate) fn from_structured(s: Structured) -> Option<Self> {
        match s {
            Structured::YesNo(v) => Some(AnswerPayload::Yesno(v)),
            Structured::Factoid(v) => Some(AnswerPayload::Factoid(v)),
            Structured::List(v) => Some(AnswerPayload::List(v)),
            Structured::Synthesis(_) => None,
        }
    }
}

/// Gold answer: yes/no, one synonym set for factoid, one synonym set per
/// entity for list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gold {
    Yesno(YesNo),
    Factoid(Vec<String>),
    List(Vec<Vec<String>>),
}

impl Gold {
    pub fn qtype(&self) -> QuestionType {
        match self {
            Gold::Yesno(_) => QuestionType::Yesno,
            Gold::Factoid(_) => QuestionType::Factoid,
            Gold::List(_) => QuestionType::List,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub qtype: QuestionType,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Gold>,
    /// Phase B evidence.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snippets: Vec<Snippet>,
    /// Phase B referenced document ids.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub documents: Vec<String>,
}

impl Question {
    pub fn new(question_id: impl Into<String>, qtype: QuestionType, body: impl Into<String>) -> Self {
        Question {
            question_id: question_id.into(),
            qtype,
            body: body.into(),
            gold: None,
            snippets: Vec::new(),
            documents: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateAnswer {
    pub question_id: String,
    pub model_id: String,
    pub qtype: QuestionType,
    /// `None` exactly when `insufficient`.
    pub payload: Option<AnswerPayload>,
    pub raw_text: String,
    pub insufficient: bool,
    /// A repair reissue was needed.
    pub repaired: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The user prompt for `question` over `bundle`; an empty bundle selects the
/// question-only, low-evidence variant.
pub fn build_user_prompt(question: &Question, bundle: &ContextBundle, templates: &Templates) -> String {
    let context = if bundle.is_empty() {
        templates.low_evidence.trim_end().to_string()
    } else {
        format!("Context:\n{}", bundle.text)
    };
    fill(templates.for_qtype(question.qtype), &[("question", &question.body), ("context", &context)])
}

pub fn build_prompt(question: &Question, bundle: &ContextBundle, templates: &Templates, model_id: &str) -> ChatRequest {
    ChatRequest {
        model_id: model_id.to_string(),
        system_prompt: templates.qa_system.clone(),
        user_prompt: build_user_prompt(question, bundle, templates),
        temperature: CANDIDATE_TEMPERATURE,
        max_output_tokens: MAX_OUTPUT_TOKENS,
    }
}

/// `text` with the repair instruction appended.
pub(crate) fn repair_prompt(user_prompt: &str, templates: &Templates) -> String {
    format!("{user_prompt}\n\n{}", templates.repair.trim_end())
}

fn is_sentinel(text: &str) -> bool {
    text.contains(INSUFFICIENT_EVIDENCE)
}

fn candidate(question: &Question, binding: &Binding, bundle: &ContextBundle, templates: &Templates) -> CandidateAnswer {
    let mut c = CandidateAnswer {
        question_id: question.question_id.clone(),
        model_id: binding.model_id.clone(),
        qtype: question.qtype,
        payload: None,
        raw_text: String::new(),
        insufficient: true,
        repaired: false,
        error: None,
    };
    let mut req = build_prompt(question, bundle, templates, &binding.model_id);
    for attempt in 0..2 {
        let text = match binding.complete(&req) {
            Ok(r) => r.text,
            Err(e) => {
                c.error = Some(e.to_string());
                return c;
            }
        };
        c.raw_text = text;
        if is_sentinel(&c.raw_text) {
            c.error = None;
            return c;
        }
        match parse_structured_output(&c.raw_text, question.qtype.shape()) {
            Ok(s) => {
                c.payload = AnswerPayload::from_structured(s);
                c.insufficient = c.payload.is_none();
                c.error = None;
                return c;
            }
            Err(e @ GatewayError::MalformedOutput { .. }) => {
                c.error = Some(e.code().to_string());
                if attempt == 0 {
                    c.repaired = true;
                    req.user_prompt = repair_prompt(&req.user_prompt, templates);
                }
            }
            Err(e) => {
                c.error = Some(e.to_string());
                return c;
            }
        }
    }
    c
}

/// One candidate per binding, in binding order. Bindings are queried
/// concurrently. Malformed output gets one repair reissue; a second failure,
/// a gateway error or the sentinel marks the candidate insufficient.
pub fn generate_candidates(
    question: &Question,
    bundle: &ContextBundle,
    bindings: &[Binding],
    templates: &Templates,
) -> Vec<CandidateAnswer> {
    std::thread::scope(|s| {
        let handles: Vec<_> =
            bindings.iter().map(|b| s.spawn(move || candidate(question, b, bundle, templates))).collect();
        handles.into_iter().map(|h| h.join().expect("candidate thread panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::context::{ContextMode, Strategy};
    use crate::llm::{CallLog, ScriptedBackend};

    fn bundle(text: &str) -> ContextBundle {
        ContextBundle {
            mode: ContextMode::ProvidedSnippets,
            strategy: Strategy::SimpleTruncation,
            budget_tokens: 100,
            text: text.into(),
            provenance: Vec::new(),
            insufficient: text.is_empty(),
        }
    }

    fn scripted(model: &str, response: &str) -> Binding {
        Binding::new(model, Arc::new(ScriptedBackend::new().with_default(response)))
    }

    #[test]
    fn prompt_contents() {
        let t = Templates::default();
        let q = Question::new("q1", QuestionType::Yesno, "Is aspirin an NSAID?");
        let req = build_prompt(&q, &bundle("Aspirin is an NSAID."), &t, "m");
        assert!(req.user_prompt.contains("\"yes\" or \"no\""));
        assert!(req.user_prompt.contains(INSUFFICIENT_EVIDENCE));
        assert!(req.user_prompt.contains("Aspirin is an NSAID."));
        assert_eq!(req.temperature, 0.1);
        let low = build_prompt(&q, &bundle(""), &t, "m");
        assert!(low.user_prompt.contains("low-evidence"));
        let f = build_prompt(&Question::new("q2", QuestionType::Factoid, "Which?"), &bundle("x"), &t, "m");
        assert!(f.user_prompt.contains("up to 5"));
    }

    #[test]
    fn one_candidate_per_binding_in_order() {
        let q = Question::new("q1", QuestionType::Yesno, "Is it?");
        let bindings = [scripted("a", "yes"), scripted("b", "No."), scripted("c", INSUFFICIENT_EVIDENCE)];
        let got = generate_candidates(&q, &bundle("ctx"), &bindings, &Templates::default());
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].payload, Some(AnswerPayload::Yesno(YesNo::Yes)));
        assert_eq!(got[1].payload, Some(AnswerPayload::Yesno(YesNo::No)));
        assert!(got[2].insufficient && got[2].payload.is_none());
        assert_eq!(got.iter().map(|c| c.model_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn repair_then_valid() {
        let t = Templates::default();
        let backend = ScriptedBackend::new().with_handler(|req| {
            Some(
                if req.user_prompt.contains("Emit only the structured block") {
                    "```json\n{\"answer\":\"yes\"}\n```"
                } else {
                    "maybe"
                }
                .into(),
            )
        });
        let log = CallLog::new();
        let b = Binding::new("m", Arc::new(backend)).with_log(log.clone());
        let q = Question::new("q1", QuestionType::Yesno, "Is it?");
        let got = generate_candidates(&q, &bundle("ctx"), &[b], &t);
        assert_eq!(got[0].payload, Some(AnswerPayload::Yesno(YesNo::Yes)));
        assert!(got[0].repaired && !got[0].insufficient);
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn malformed_twice_is_insufficient() {
        let q = Question::new("q1", QuestionType::Yesno, "Is it?");
        let got = generate_candidates(&q, &bundle("ctx"), &[scripted("m", "perhaps")], &Templates::default());
        assert!(got[0].insufficient && got[0].repaired);
        assert_eq!(got[0].error.as_deref(), Some("MALFORMED_OUTPUT"));
    }
}
