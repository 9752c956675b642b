use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder edge label standing in for any numeric literal.
pub const NUM_MARKER: &str = "<NUM>";
/// Placeholder edge label standing in for any quoted string literal.
pub const STR_MARKER: &str = "<STR>";

/// A single whitespace-delimited CNL token. Quoted strings are one token,
/// quotes included.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CnlToken(String);

impl CnlToken {
    /// Wraps text as a token without checking it.
    pub fn new(text: impl Into<String>) -> Self {
        CnlToken(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CnlToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for CnlToken {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("unterminated quote starting at byte {offset}")]
    UnterminatedQuote { offset: usize },
}

/// Splits `text` into CNL tokens.
///
/// Runs of whitespace separate tokens. A double quote opens a span that runs
/// to the next double quote; whitespace inside it does not split. Everything
/// outside quoted spans is lowercased.
pub fn tokenize(text: &str) -> Result<Vec<CnlToken>, TokenizeError> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut chars = text.char_indices();

    while let Some((offset, ch)) = chars.next() {
        if ch == '"' {
            current.push('"');
            let mut closed = false;
            for (_, inner) in chars.by_ref() {
                current.push(inner);
                if inner == '"' {
                    closed = true;
                    break;
                }
            }
            if !closed {
                return Err(TokenizeError::UnterminatedQuote { offset });
            }
        } else if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(CnlToken(std::mem::take(&mut current)));
            }
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(CnlToken(current));
    }
    Ok(tokens)
}

/// Tokenizes and returns plain strings.
pub fn tokenize_strings(text: &str) -> Result<Vec<String>, TokenizeError> {
    Ok(tokenize(text)?.into_iter().map(CnlToken::into_string).collect())
}

/// Joins tokens with single spaces.
pub fn join_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

/// Kind of a literal token, as seen by the trie and the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerKind {
    Num,
    Str,
}

impl MarkerKind {
    pub fn marker(self) -> &'static str {
        match self {
            MarkerKind::Num => NUM_MARKER,
            MarkerKind::Str => STR_MARKER,
        }
    }

    pub fn from_marker(text: &str) -> Option<Self> {
        match text {
            NUM_MARKER => Some(MarkerKind::Num),
            STR_MARKER => Some(MarkerKind::Str),
            _ => None,
        }
    }
}

/// Optional sign, digits, optional `.digits`.
pub fn is_numeric_literal(token: &str) -> bool {
    let body = token
        .strip_prefix('-')
        .or_else(|| token.strip_prefix('+'))
        .unwrap_or(token);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    digits(int) && frac.is_none_or(digits)
}

pub fn is_quoted_literal(token: &str) -> bool {
    token.len() >= 2 && token.starts_with('"') && token.ends_with('"')
}

/// Marker kind of a literal token, if it is one.
pub fn classify_literal(token: &str) -> Option<MarkerKind> {
    if is_numeric_literal(token) {
        Some(MarkerKind::Num)
    } else if is_quoted_literal(token) {
        Some(MarkerKind::Str)
    } else {
        None
    }
}

/// Replaces numeric and quoted tokens with their markers.
pub fn abstract_token(token: &str) -> &str {
    match classify_literal(token) {
        Some(kind) => kind.marker(),
        None => token,
    }
}
