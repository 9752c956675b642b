use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{Action, Clause, CnlAst, Condition, Connective};
use super::grammar::{literal_from_token, CnlGrammar, PhraseMismatch, PhraseSet};
use super::token::{tokenize, CnlToken, TokenizeError};

/// Parse failure at `position` (a token index).
///
/// `expected` holds every token that would have been legal there; literal
/// slots are reported as `<NUM>` / `<STR>` markers or `true` / `false`.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub struct ParseError {
    pub position: usize,
    pub expected: BTreeSet<String>,
    /// `None` at end of input.
    pub found: Option<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let expected: Vec<&str> = self.expected.iter().map(String::as_str).collect();
        match &self.found {
            Some(tok) => write!(f, "unexpected {tok:?} at token {}", self.position)?,
            None => write!(f, "unexpected end of input at token {}", self.position)?,
        }
        write!(f, "; expected one of: {}", expected.join(", "))
    }
}

/// Either stage of turning text into an AST can fail.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CnlError {
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

struct Cursor<'a, S> {
    tokens: &'a [S],
    pos: usize,
    /// Tokens that would have extended the previous phrase at `pos`.
    pending: BTreeSet<String>,
}

impl<'a, S: AsRef<str>> Cursor<'a, S> {
    fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(AsRef::as_ref)
    }

    fn advance_to(&mut self, pos: usize, pending: BTreeSet<String>) {
        self.pos = pos;
        self.pending = pending;
    }

    fn error_at(&self, position: usize, mut expected: BTreeSet<String>) -> ParseError {
        if position == self.pos {
            expected.extend(self.pending.iter().cloned());
        }
        ParseError {
            position,
            expected,
            found: self.tokens.get(position).map(|t| t.as_ref().to_string()),
        }
    }

    fn expect_one_of(&mut self, words: &[&str]) -> Result<String, ParseError> {
        match self.peek() {
            Some(tok) if words.contains(&tok) => {
                let tok = tok.to_string();
                self.advance_to(self.pos + 1, BTreeSet::new());
                Ok(tok)
            }
            _ => Err(self.error_at(self.pos, words.iter().map(|w| w.to_string()).collect())),
        }
    }

    fn phrase(&mut self, set: &PhraseSet) -> Result<(usize, Option<super::ast::Literal>), ParseError> {
        match set.match_at(self.tokens, self.pos) {
            Ok(m) => {
                self.advance_to(m.end, m.continuations);
                Ok((m.index, m.literal))
            }
            Err(PhraseMismatch { position, expected }) => Err(self.error_at(position, expected)),
        }
    }
}

/// Parses a token sequence into the unique AST under `grammar`.
///
/// `and` binds tighter than `or`; both associate to the left.
pub fn parse<S: AsRef<str>>(tokens: &[S], grammar: &CnlGrammar) -> Result<CnlAst, ParseError> {
    let mut cur = Cursor {
        tokens,
        pos: 0,
        pending: BTreeSet::new(),
    };
    cur.expect_one_of(&["if"])?;

    // Disjunction of conjunctions, collected flat and folded left.
    let mut terms: Vec<Vec<Condition>> = vec![Vec::new()];
    loop {
        let clause = parse_clause(&mut cur, grammar)?;
        terms.last_mut().expect("non-empty").push(Condition::Clause(clause));
        match cur.expect_one_of(&["and", "or", "then"])?.as_str() {
            "and" => {}
            "or" => terms.push(Vec::new()),
            _ => break,
        }
    }
    let condition = Condition::chain(
        Connective::Or,
        terms.into_iter().map(|t| Condition::chain(Connective::And, t)),
    );

    let mut actions = Vec::new();
    loop {
        let (index, literal) = cur.phrase(&grammar.action_set)?;
        actions.push(Action {
            template: grammar.actions()[index].template.clone(),
            argument: literal,
        });
        if cur.peek().is_none() {
            break;
        }
        cur.expect_one_of(&["and"])?;
    }
    Ok(CnlAst { condition, actions })
}

fn parse_clause<S: AsRef<str>>(cur: &mut Cursor<'_, S>, grammar: &CnlGrammar) -> Result<Clause, ParseError> {
    let (subject_index, _) = cur.phrase(&grammar.subject_set)?;
    let subject = &grammar.subjects()[subject_index];
    let (attribute_index, _) = cur.phrase(&grammar.attribute_sets[subject])?;
    let attribute = &grammar.attributes_of(subject)[attribute_index];
    let (comparator_index, _) = cur.phrase(&grammar.comparator_set)?;
    let comparator = &grammar.comparators()[comparator_index];

    let kind = comparator.operand;
    let literal = cur.peek().and_then(|tok| literal_from_token(tok, kind));
    let Some(literal) = literal else {
        let expected = kind.expected_labels().iter().map(|s| s.to_string()).collect();
        return Err(cur.error_at(cur.pos, expected));
    };
    cur.advance_to(cur.pos + 1, BTreeSet::new());
    Ok(Clause {
        subject: subject.clone(),
        attribute: attribute.clone(),
        comparator: comparator.phrase.clone(),
        literal,
    })
}

/// Tokenizes then parses.
pub fn parse_text(text: &str, grammar: &CnlGrammar) -> Result<CnlAst, CnlError> {
    let tokens: Vec<CnlToken> = tokenize(text)?;
    Ok(parse(&tokens, grammar)?)
}
