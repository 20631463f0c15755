use crate::index::Field;
use crate::tokenize::tokenize;

use super::{IssueCode, ParseError, QueryAst, Span, KEYWORDS};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    And,
    Or,
    Not,
    Field(Field),
    Word { text: String, fuzzy: bool },
    Phrase(Vec<String>),
}

#[derive(Debug, Clone)]
struct Lexeme {
    tok: Tok,
    span: Span,
}

fn err(code: IssueCode, span: Span, message: impl Into<String>) -> ParseError {
    ParseError { code, message: message.into(), span }
}

pub(crate) fn parse_field(name: &str) -> Option<Field> {
    match name {
        "title" => Some(Field::Title),
        "abstract" => Some(Field::Abstract),
        _ => None,
    }
}

fn lex(chars: &[char]) -> Result<Vec<Lexeme>, ParseError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '(' => {
                out.push(Lexeme { tok: Tok::LParen, span: Span::new(i, i + 1) });
                i += 1;
            }
            ')' => {
                out.push(Lexeme { tok: Tok::RParen, span: Span::new(i, i + 1) });
                i += 1;
            }
            '"' => {
                let close =
                    chars[i + 1..].iter().position(|&c| c == '"').map(|p| i + 1 + p).ok_or_else(|| {
                        err(IssueCode::UnbalancedQuote, Span::new(i, chars.len()), "unterminated phrase")
                    })?;
                let body: String = chars[i + 1..close].iter().collect();
                let span = Span::new(i, close + 1);
                let tokens = tokenize(&body);
                if tokens.is_empty() {
                    return Err(err(IssueCode::EmptyPhrase, span, "phrase contains no searchable tokens"));
                }
                if chars.get(close + 1) == Some(&'~') {
                    return Err(err(
                        IssueCode::MisplacedFuzzy,
                        Span::new(close + 1, close + 2),
                        "fuzzy marker is only allowed on single terms",
                    ));
                }
                out.push(Lexeme { tok: Tok::Phrase(tokens), span });
                i = close + 1;
            }
            _ => {
                let start = i;
                while i < chars.len() && !chars[i].is_whitespace() && !matches!(chars[i], '(' | ')' | '"') {
                    i += 1;
                }
                lex_word(&chars[start..i], start, &mut out)?;
            }
        }
    }
    Ok(out)
}

fn lex_word(word: &[char], offset: usize, out: &mut Vec<Lexeme>) -> Result<(), ParseError> {
    let mut rest = word;
    let mut at = offset;
    if let Some(colon) = rest.iter().position(|&c| c == ':') {
        let name: String = rest[..colon].iter().collect();
        let span = Span::new(at, at + colon + 1);
        let field = parse_field(&name)
            .ok_or_else(|| err(IssueCode::UnknownField, span, format!("unknown field prefix {name:?}")))?;
        out.push(Lexeme { tok: Tok::Field(field), span });
        rest = &rest[colon + 1..];
        at += colon + 1;
        if rest.is_empty() {
            return Ok(());
        }
        if let Some(p) = rest.iter().position(|&c| c == ':') {
            return Err(err(IssueCode::UnexpectedToken, Span::new(at + p, at + p + 1), "unexpected ':' inside term"));
        }
    }
    let span = Span::new(at, at + rest.len());
    let mut text: String = rest.iter().collect();
    let fuzzy = text.ends_with('~');
    if fuzzy {
        text.pop();
    }
    if let Some(p) = text.chars().position(|c| c == '~') {
        return Err(err(IssueCode::MisplacedFuzzy, Span::new(at + p, at + p + 1), "'~' must end a term"));
    }
    if text.is_empty() {
        return Err(err(IssueCode::MisplacedFuzzy, span, "'~' without a term"));
    }
    let tok = match text.as_str() {
        "AND" if !fuzzy => Tok::And,
        "OR" if !fuzzy => Tok::Or,
        "NOT" if !fuzzy => Tok::Not,
        _ => {
            if KEYWORDS.contains(&text.as_str()) {
                return Err(err(IssueCode::MisplacedFuzzy, span, "operators cannot be fuzzy"));
            }
            if tokenize(&text).is_empty() {
                return Err(err(IssueCode::EmptyTerm, span, format!("term {text:?} has no searchable characters")));
            }
            Tok::Word { text, fuzzy }
        }
    };
    out.push(Lexeme { tok, span });
    Ok(())
}

struct Parser {
    toks: Vec<Lexeme>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Lexeme> {
        self.toks.get(self.pos)
    }

    fn end_span(&self) -> Span {
        Span::new(self.len, self.len)
    }

    fn starts_operand(tok: &Tok) -> bool {
        matches!(tok, Tok::LParen | Tok::Not | Tok::Field(_) | Tok::Word { .. } | Tok::Phrase(_))
    }

    fn parse_or(&mut self) -> Result<QueryAst, ParseError> {
        let mut items = vec![self.parse_and()?];
        loop {
            match self.peek().map(|l| l.tok.clone()) {
                Some(Tok::Or) => {
                    self.pos += 1;
                    items.push(self.parse_and()?);
                }
                Some(ref t) if Self::starts_operand(t) => items.push(self.parse_and()?),
                _ => break,
            }
        }
        Ok(collapse(items, QueryAst::Or))
    }

    fn parse_and(&mut self) -> Result<QueryAst, ParseError> {
        let mut items = vec![self.parse_unary()?];
        while matches!(self.peek(), Some(Lexeme { tok: Tok::And, .. })) {
            self.pos += 1;
            items.push(self.parse_unary()?);
        }
        Ok(collapse(items, QueryAst::And))
    }

    fn parse_unary(&mut self) -> Result<QueryAst, ParseError> {
        if matches!(self.peek(), Some(Lexeme { tok: Tok::Not, .. })) {
            self.pos += 1;
            return Ok(QueryAst::negate(self.parse_unary()?));
        }
        self.parse_primary(None)
    }

    /// An operand was required here; report what was found instead.
    fn missing_operand(&self) -> ParseError {
        match self.peek() {
            None => {
                let span = self.toks.last().map(|l| l.span).unwrap_or_else(|| self.end_span());
                err(IssueCode::DanglingOperator, span, "operator is missing its right operand")
            }
            Some(l) => match l.tok {
                Tok::And | Tok::Or => {
                    err(IssueCode::DanglingOperator, l.span, "operator where an operand was expected")
                }
                Tok::RParen => err(IssueCode::UnbalancedParen, l.span, "unexpected ')'"),
                _ => err(IssueCode::UnexpectedToken, l.span, "unexpected token"),
            },
        }
    }

    fn parse_primary(&mut self, scope: Option<Field>) -> Result<QueryAst, ParseError> {
        let Some(lexeme) = self.peek().cloned() else {
            return Err(self.missing_operand());
        };
        match lexeme.tok {
            Tok::Field(field) => {
                if scope.is_some() {
                    return Err(err(IssueCode::UnexpectedToken, lexeme.span, "field prefix cannot be stacked"));
                }
                self.pos += 1;
                match self.peek() {
                    Some(Lexeme { tok: Tok::LParen | Tok::Word { .. } | Tok::Phrase(_), span })
                        if span.start == lexeme.span.end =>
                    {
                        self.parse_primary(Some(field))
                    }
                    _ => Err(err(
                        IssueCode::UnexpectedToken,
                        lexeme.span,
                        "field prefix must precede a term, phrase or group",
                    )),
                }
            }
            Tok::LParen => {
                self.pos += 1;
                if matches!(self.peek(), Some(Lexeme { tok: Tok::RParen, .. })) {
                    let close = self.peek().unwrap().span;
                    return Err(err(IssueCode::EmptyGroup, Span::new(lexeme.span.start, close.end), "empty group"));
                }
                let inner = self.parse_or()?;
                match self.peek() {
                    Some(Lexeme { tok: Tok::RParen, .. }) => {
                        self.pos += 1;
                        Ok(match scope {
                            Some(f) => scope_leaves(inner, f),
                            None => inner,
                        })
                    }
                    None => Err(err(IssueCode::UnbalancedParen, lexeme.span, "unclosed '('")),
                    Some(l) => Err(err(IssueCode::UnexpectedToken, l.span, "expected ')'")),
                }
            }
            Tok::Word { text, fuzzy } => {
                self.pos += 1;
                Ok(QueryAst::Term { text, field: scope, fuzzy })
            }
            Tok::Phrase(tokens) => {
                self.pos += 1;
                Ok(QueryAst::Phrase { tokens, field: scope })
            }
            Tok::And | Tok::Or | Tok::Not | Tok::RParen => Err(self.missing_operand()),
        }
    }
}

fn collapse(mut items: Vec<QueryAst>, make: fn(Vec<QueryAst>) -> QueryAst) -> QueryAst {
    if items.len() == 1 {
        items.pop().unwrap()
    } else {
        make(items)
    }
}

/// Apply a group's field prefix to every leaf that has none of its own.
fn scope_leaves(node: QueryAst, field: Field) -> QueryAst {
    match node {
        QueryAst::Term { text, field: None, fuzzy } => QueryAst::Term { text, field: Some(field), fuzzy },
        QueryAst::Phrase { tokens, field: None } => QueryAst::Phrase { tokens, field: Some(field) },
        QueryAst::And(c) => QueryAst::And(c.into_iter().map(|n| scope_leaves(n, field)).collect()),
        QueryAst::Or(c) => QueryAst::Or(c.into_iter().map(|n| scope_leaves(n, field)).collect()),
        QueryAst::Not(c) => QueryAst::negate(scope_leaves(*c, field)),
        leaf => leaf,
    }
}

/// Parse query text into a tree satisfying [`QueryAst::check`].
pub fn parse_query(text: &str) -> Result<QueryAst, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let toks = lex(&chars)?;
    if toks.is_empty() {
        return Err(err(IssueCode::EmptyQuery, Span::new(0, chars.len()), "query is empty"));
    }
    let mut parser = Parser { toks, pos: 0, len: chars.len() };
    let ast = parser.parse_or()?;
    if let Some(l) = parser.peek() {
        let code = if l.tok == Tok::RParen { IssueCode::UnbalancedParen } else { IssueCode::UnexpectedToken };
        return Err(err(code, l.span, "unexpected trailing input"));
    }
    if !ast.has_positive_leaf() {
        return Err(err(IssueCode::PureNegation, Span::new(0, chars.len()), "query only contains negated terms"));
    }
    Ok(ast)
}
