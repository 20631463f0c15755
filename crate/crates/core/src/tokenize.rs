//! The single analysis chain shared by indexing, querying, context budgets and
//! the test embedder: lowercase, split on anything that is not alphanumeric.
//! No stemming, no stopwords.

/// A token and the byte range it occupies in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Iterate over tokens with their byte offsets.
pub fn token_spans(text: &str) -> impl Iterator<Item = TokenSpan> + '_ {
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || {
        while let Some(&(_, c)) = chars.peek() {
            if c.is_alphanumeric() {
                break;
            }
            chars.next();
        }
        let (start, _) = *chars.peek()?;
        let mut end = start;
        let mut token = String::new();
        while let Some(&(i, c)) = chars.peek() {
            if !c.is_alphanumeric() {
                break;
            }
            token.extend(c.to_lowercase());
            end = i + c.len_utf8();
            chars.next();
        }
        Some(TokenSpan { start, end, text: token })
    })
}

pub fn tokenize(text: &str) -> Vec<String> {
    token_spans(text).map(|t| t.text).collect()
}

pub fn count_tokens(text: &str) -> usize {
    token_spans(text).count()
}

/// Byte offset just past the `max_tokens`-th token, or `text.len()` when the
/// text has no more tokens than that.
pub fn truncate_to_tokens(text: &str, max_tokens: usize) -> &str {
    if max_tokens == 0 {
        return "";
    }
    match token_spans(text).nth(max_tokens - 1) {
        Some(span) if token_spans(&text[span.end..]).next().is_some() => &text[..span.end],
        _ => text,
    }
}
