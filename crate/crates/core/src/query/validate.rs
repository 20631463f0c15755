//! Pattern checks run on raw query text before parsing.
//!
//! Issue codes from this report are fed back verbatim into the refinement
//! prompt, so each rule reports a span the model can locate.

use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use super::parser::{parse_field, parse_query};
use super::{IssueCode, Span};

pub const MAX_QUERY_CHARS: usize = 4096;

static FORBIDDEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"[*?^\[\]{}\\/<>=!&|+\p{Cc}]"#).expect("valid regex"));
static FIELD_PREFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"([^\s()":~]*):"#).expect("valid regex"));
static LOWER_OPERATOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?:^|[\s(])(and|or|not)(?:$|[\s)])"#).expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub code: IssueCode,
    pub severity: Severity,
    pub message: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn from_issues(issues: Vec<Issue>) -> Self {
        let ok = !issues.iter().any(|i| i.severity == Severity::Error);
        ValidationReport { ok, issues }
    }

    pub fn error_codes(&self) -> Vec<IssueCode> {
        self.issues.iter().filter(|i| i.severity == Severity::Error).map(|i| i.code).collect()
    }
}

struct Text {
    /// byte offset -> char offset, with one trailing entry for the text length.
    char_at: Vec<usize>,
    /// per char: inside a quoted region (quotes included)
    quoted: Vec<bool>,
}

impl Text {
    fn new(raw: &str) -> Self {
        let mut char_at = vec![0; raw.len() + 1];
        let mut quoted = Vec::new();
        let mut inside = false;
        for (ci, (bi, c)) in raw.char_indices().enumerate() {
            for slot in &mut char_at[bi..bi + c.len_utf8()] {
                *slot = ci;
            }
            if c == '"' {
                quoted.push(true);
                inside = !inside;
            } else {
                quoted.push(inside);
            }
        }
        char_at[raw.len()] = quoted.len();
        Text { char_at, quoted }
    }

    fn span(&self, start: usize, end: usize) -> Span {
        Span::new(self.char_at[start], self.char_at[end])
    }

    fn is_quoted(&self, byte: usize) -> bool {
        self.quoted.get(self.char_at[byte]).copied().unwrap_or(false)
    }
}

fn issue(code: IssueCode, severity: Severity, span: Span, message: impl Into<String>) -> Issue {
    Issue { code, severity, message: message.into(), span }
}

/// Surface checks on raw text. Anything that passes is also run through the
/// parser, so `ok == true` guarantees [`parse_query`] succeeds.
pub fn validate_query(text: &str) -> ValidationReport {
    use Severity::{Error, Warning};

    let t = Text::new(text);
    let n_chars = t.quoted.len();
    let mut issues = Vec::new();

    if text.trim().is_empty() {
        issues.push(issue(IssueCode::EmptyQuery, Error, Span::new(0, n_chars), "query is empty"));
        return ValidationReport::from_issues(issues);
    }
    if n_chars > MAX_QUERY_CHARS {
        issues.push(issue(
            IssueCode::TooLong,
            Error,
            Span::new(MAX_QUERY_CHARS, n_chars),
            format!("query exceeds {MAX_QUERY_CHARS} characters"),
        ));
    }

    for m in FORBIDDEN.find_iter(text) {
        issues.push(issue(
            IssueCode::ForbiddenChar,
            Error,
            t.span(m.start(), m.end()),
            format!("character {:?} is not part of the query language", m.as_str()),
        ));
    }

    let quote_positions: Vec<usize> = text.match_indices('"').map(|(i, _)| i).collect();
    if quote_positions.len() % 2 == 1 {
        let last = *quote_positions.last().unwrap();
        issues.push(issue(IssueCode::UnbalancedQuote, Error, t.span(last, text.len()), "unterminated quote"));
    }

    let mut open = Vec::new();
    for (i, c) in text.char_indices() {
        if t.is_quoted(i) {
            continue;
        }
        match c {
            '(' => open.push(i),
            ')' if open.pop().is_none() => {
                issues.push(issue(IssueCode::UnbalancedParen, Error, t.span(i, i + 1), "unmatched ')'"));
            }
            _ => {}
        }
    }
    for i in open {
        issues.push(issue(IssueCode::UnbalancedParen, Error, t.span(i, i + 1), "unclosed '('"));
    }

    for cap in FIELD_PREFIX.captures_iter(text) {
        let whole = cap.get(0).unwrap();
        if t.is_quoted(whole.end() - 1) {
            continue;
        }
        let name = cap.get(1).unwrap().as_str();
        if parse_field(name).is_none() {
            issues.push(issue(
                IssueCode::UnknownField,
                Error,
                t.span(whole.start(), whole.end()),
                format!("unknown field {name:?}; allowed fields are title and abstract"),
            ));
        }
    }

    for cap in LOWER_OPERATOR.captures_iter(text) {
        let m = cap.get(1).unwrap();
        if !t.is_quoted(m.start()) {
            issues.push(issue(
                IssueCode::LowercaseOperator,
                Warning,
                t.span(m.start(), m.end()),
                format!("{:?} is searched as a word; operators must be uppercase", m.as_str()),
            ));
        }
    }

    if !issues.iter().any(|i| i.severity == Error) {
        if let Err(e) = parse_query(text) {
            issues.push(issue(e.code, Error, e.span, e.message));
        }
    }
    ValidationReport::from_issues(issues)
}
