//! Boolean query-string language.
//!
//! Grammar (NOT binds tighter than AND, AND tighter than OR, all
//! left-associative; juxtaposed operands are joined with OR):
//!
//! ```text
//! query   := or
//! or      := and ( ("OR" | <implicit>) and )*
//! and     := unary ( "AND" unary )*
//! unary   := "NOT" unary | primary
//! primary := [field ":"] ( "(" query ")" | '"' phrase '"' | word ["~"] )
//! field   := "title" | "abstract"
//! ```

mod parser;
mod relax;
mod validate;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::index::Field;
use crate::tokenize::tokenize;

pub use parser::parse_query;
pub use relax::{relax_query, DocFreq};
pub use validate::{validate_query, Issue, Severity, ValidationReport, MAX_QUERY_CHARS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum QueryAst {
    Term { text: String, field: Option<Field>, fuzzy: bool },
    Phrase { tokens: Vec<String>, field: Option<Field> },
    And(Vec<QueryAst>),
    Or(Vec<QueryAst>),
    Not(Box<QueryAst>),
}

/// Character offsets `[start, end)` into the query text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    EmptyQuery,
    TooLong,
    ForbiddenChar,
    UnbalancedQuote,
    UnbalancedParen,
    UnknownField,
    DanglingOperator,
    EmptyGroup,
    EmptyTerm,
    EmptyPhrase,
    MisplacedFuzzy,
    UnexpectedToken,
    PureNegation,
    LowercaseOperator,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::EmptyQuery => "EMPTY_QUERY",
            IssueCode::TooLong => "TOO_LONG",
            IssueCode::ForbiddenChar => "FORBIDDEN_CHAR",
            IssueCode::UnbalancedQuote => "UNBALANCED_QUOTE",
            IssueCode::UnbalancedParen => "UNBALANCED_PAREN",
            IssueCode::UnknownField => "UNKNOWN_FIELD",
            IssueCode::DanglingOperator => "DANGLING_OPERATOR",
            IssueCode::EmptyGroup => "EMPTY_GROUP",
            IssueCode::EmptyTerm => "EMPTY_TERM",
            IssueCode::EmptyPhrase => "EMPTY_PHRASE",
            IssueCode::MisplacedFuzzy => "MISPLACED_FUZZY",
            IssueCode::UnexpectedToken => "UNEXPECTED_TOKEN",
            IssueCode::PureNegation => "PURE_NEGATION",
            IssueCode::LowercaseOperator => "LOWERCASE_OPERATOR",
        }
    }
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code} at {}..{}: {message}", span.start, span.end)]
pub struct ParseError {
    pub code: IssueCode,
    pub message: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("query parse error: {0}")]
    Parse(#[from] ParseError),
    #[error("invalid query tree: {0}")]
    InvalidAst(String),
    #[error("NOTHING_LEFT: relaxation removed every searchable term")]
    NothingLeft,
}

pub const KEYWORDS: [&str; 3] = ["AND", "OR", "NOT"];
const RESERVED_CHARS: [char; 5] = ['(', ')', '"', ':', '~'];

/// True when `text` lexes back as a single bare word.
pub(crate) fn is_bare_word(text: &str) -> bool {
    !text.is_empty()
        && !KEYWORDS.contains(&text)
        && !text.chars().any(|c| c.is_whitespace() || RESERVED_CHARS.contains(&c))
        && !tokenize(text).is_empty()
}

impl QueryAst {
    pub fn term(text: impl Into<String>) -> Self {
        QueryAst::Term { text: text.into(), field: None, fuzzy: false }
    }

    pub fn fuzzy(text: impl Into<String>) -> Self {
        QueryAst::Term { text: text.into(), field: None, fuzzy: true }
    }

    pub fn phrase<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        QueryAst::Phrase { tokens: tokens.into_iter().map(Into::into).collect(), field: None }
    }

    pub fn in_field(self, f: Field) -> Self {
        match self {
            QueryAst::Term { text, fuzzy, .. } => QueryAst::Term { text, field: Some(f), fuzzy },
            QueryAst::Phrase { tokens, .. } => QueryAst::Phrase { tokens, field: Some(f) },
            other => other,
        }
    }

    pub fn negate(child: QueryAst) -> Self {
        QueryAst::Not(Box::new(child))
    }

    /// Check the structural invariants every consumer relies on.
    pub fn check(&self) -> Result<(), QueryError> {
        self.check_node()?;
        if !self.has_positive_leaf() {
            return Err(QueryError::InvalidAst("query has no non-negated term".into()));
        }
        Ok(())
    }

    fn check_node(&self) -> Result<(), QueryError> {
        match self {
            QueryAst::Term { text, .. } => {
                if !is_bare_word(text) {
                    return Err(QueryError::InvalidAst(format!("term {text:?} is not a searchable word")));
                }
            }
            QueryAst::Phrase { tokens, .. } => {
                if tokens.is_empty() {
                    return Err(QueryError::InvalidAst("empty phrase".into()));
                }
                for t in tokens {
                    if tokenize(t) != [t.as_str()] {
                        return Err(QueryError::InvalidAst(format!("phrase token {t:?} is not normalized")));
                    }
                }
            }
            QueryAst::And(children) | QueryAst::Or(children) => {
                if children.len() < 2 {
                    return Err(QueryError::InvalidAst("AND/OR needs at least two operands".into()));
                }
                for c in children {
                    c.check_node()?;
                }
            }
            QueryAst::Not(child) => child.check_node()?,
        }
        Ok(())
    }

    /// Whether some leaf sits outside every NOT.
    pub fn has_positive_leaf(&self) -> bool {
        match self {
            QueryAst::Term { .. } | QueryAst::Phrase { .. } => true,
            QueryAst::And(c) | QueryAst::Or(c) => c.iter().any(QueryAst::has_positive_leaf),
            QueryAst::Not(_) => false,
        }
    }

    pub fn contains_not(&self) -> bool {
        match self {
            QueryAst::Term { .. } | QueryAst::Phrase { .. } => false,
            QueryAst::And(c) | QueryAst::Or(c) => c.iter().any(QueryAst::contains_not),
            QueryAst::Not(_) => true,
        }
    }

    /// Leaves that every match must satisfy: those reachable from the root
    /// through AND nodes only.
    pub fn mandatory_leaf_count(&self) -> usize {
        match self {
            QueryAst::Term { .. } | QueryAst::Phrase { .. } => 1,
            QueryAst::And(c) => c.iter().map(QueryAst::mandatory_leaf_count).sum(),
            QueryAst::Or(_) | QueryAst::Not(_) => 0,
        }
    }
}

impl fmt::Display for QueryAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn prefix(field: &Option<Field>) -> &'static str {
            match field {
                Some(Field::Title) => "title:",
                Some(Field::Abstract) => "abstract:",
                None => "",
            }
        }
        match self {
            QueryAst::Term { text, field, fuzzy } => {
                write!(f, "{}{}{}", prefix(field), text, if *fuzzy { "~" } else { "" })
            }
            QueryAst::Phrase { tokens, field } => write!(f, "{}\"{}\"", prefix(field), tokens.join(" ")),
            QueryAst::And(children) | QueryAst::Or(children) => {
                let op = if matches!(self, QueryAst::And(_)) { " AND " } else { " OR " };
                f.write_str("(")?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
            QueryAst::Not(child) => write!(f, "NOT {child}"),
        }
    }
}

/// Canonical fully parenthesized text; parses back to the same tree.
pub fn render_query(ast: &QueryAst) -> String {
    ast.to_string()
}
