use thiserror::Error;

use crate::cnl::{is_numeric_literal, MarkerKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("source has no {kind:?} literal to fill the marker")]
pub struct NoCandidates {
    pub kind: MarkerKind,
}

/// Literals of `kind` found in the NL source, in order of first appearance.
///
/// Quoted spans become string candidates (quotes kept, so they are valid CNL
/// tokens). Numbers are whitespace-separated words that are numeric once
/// surrounding punctuation is stripped; digits inside quotes do not count.
pub fn expand_marker(source: &str, kind: MarkerKind) -> Result<Vec<String>, NoCandidates> {
    let mut found: Vec<String> = Vec::new();
    let mut push = |s: String| {
        if !found.contains(&s) {
            found.push(s);
        }
    };

    let mut rest = source;
    while !rest.is_empty() {
        let (outside, quoted, tail) = match rest.find('"') {
            Some(open) => match rest[open + 1..].find('"') {
                Some(len) => {
                    let close = open + 1 + len;
                    (&rest[..open], Some(&rest[open..=close]), &rest[close + 1..])
                }
                None => (rest, None, ""),
            },
            None => (rest, None, ""),
        };
        if kind == MarkerKind::Num {
            for word in outside.split_whitespace() {
                let word = word
                    .trim_start_matches(|c: char| !(c.is_ascii_alphanumeric() || c == '-' || c == '+'))
                    .trim_end_matches(|c: char| !c.is_ascii_alphanumeric());
                if is_numeric_literal(word) {
                    push(word.to_string());
                }
            }
        }
        if let (MarkerKind::Str, Some(q)) = (kind, quoted) {
            push(q.to_string());
        }
        rest = tail;
    }

    if found.is_empty() {
        Err(NoCandidates { kind })
    } else {
        Ok(found)
    }
}
