use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::Literal;
use super::token::{classify_literal, tokenize_strings, MarkerKind, NUM_MARKER, STR_MARKER};

/// Words with structural meaning in the rule syntax. Grammar phrases may not use them.
pub const RESERVED_WORDS: [&str; 6] = ["if", "then", "and", "or", "true", "false"];

const BOOL_SLOT: &str = "<BOOL>";

static MINILOAN_JSON: &str = include_str!("../../data/miniloan_grammar.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperandKind {
    Numeric,
    Textual,
    Boolean,
}

impl OperandKind {
    /// Token texts the parser reports as expected for a literal of this kind.
    pub fn expected_labels(self) -> &'static [&'static str] {
        match self {
            OperandKind::Numeric => &[NUM_MARKER],
            OperandKind::Textual => &[STR_MARKER],
            OperandKind::Boolean => &["true", "false"],
        }
    }
}

/// Converts a token into a literal of the requested kind.
pub fn literal_from_token(token: &str, kind: OperandKind) -> Option<Literal> {
    match kind {
        OperandKind::Numeric if classify_literal(token) == Some(MarkerKind::Num) => {
            Decimal::from_str(token).ok().map(Literal::Number)
        }
        OperandKind::Textual if classify_literal(token) == Some(MarkerKind::Str) => {
            Some(Literal::Text(token[1..token.len() - 1].to_string()))
        }
        OperandKind::Boolean => match token {
            "true" => Some(Literal::Bool(true)),
            "false" => Some(Literal::Bool(false)),
            _ => None,
        },
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeGroup {
    pub subject: String,
    pub phrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparatorDef {
    pub phrase: String,
    /// Rule-program operator this comparator transpiles to.
    pub symbol: String,
    pub operand: OperandKind,
}

/// What an action does once its rule fires. `Set` and `Message` take the
/// action's literal slot as their value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "lowercase")]
pub enum EffectTemplate {
    Decision { value: String },
    Set { key: String },
    Message,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDef {
    /// Phrase with at most one slot: `<NUM>`, `<STR>` or `<BOOL>`.
    pub template: String,
    pub effects: Vec<EffectTemplate>,
}

impl ActionDef {
    /// Operand kind of the slot, if the template has one.
    pub fn slot(&self) -> Option<OperandKind> {
        self.template.split_whitespace().find_map(slot_kind)
    }

    pub fn arity(&self) -> usize {
        self.template.split_whitespace().filter(|w| slot_kind(w).is_some()).count()
    }
}

fn slot_kind(word: &str) -> Option<OperandKind> {
    match word {
        NUM_MARKER => Some(OperandKind::Numeric),
        STR_MARKER => Some(OperandKind::Textual),
        BOOL_SLOT => Some(OperandKind::Boolean),
        _ => None,
    }
}

/// Serialized grammar document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarDocument {
    pub subjects: Vec<String>,
    pub attributes: Vec<AttributeGroup>,
    pub comparators: Vec<ComparatorDef>,
    pub actions: Vec<ActionDef>,
}

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("failed to read grammar: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed grammar document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("grammar has no {0}")]
    Empty(&'static str),
    #[error("invalid phrase {phrase:?}: {reason}")]
    InvalidPhrase { phrase: String, reason: String },
    #[error("duplicate {set} phrase {phrase:?}")]
    Duplicate { set: String, phrase: String },
    #[error("attributes declared for unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("subject {0:?} has no attributes")]
    NoAttributes(String),
    #[error("action {template:?}: {reason}")]
    InvalidAction { template: String, reason: String },
    #[error("phrase {phrase:?} can continue with {token:?}, which may also start the following element")]
    Ambiguous { phrase: String, token: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum PhraseEdge {
    Word(String),
    Slot(OperandKind),
}

impl PhraseEdge {
    fn labels(&self) -> Vec<String> {
        match self {
            PhraseEdge::Word(w) => vec![w.clone()],
            PhraseEdge::Slot(kind) => kind.expected_labels().iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct PhraseNode {
    children: BTreeMap<PhraseEdge, usize>,
    terminal: Option<usize>,
}

/// Prefix tree over the phrases that may fill one grammar position.
#[derive(Debug, Clone)]
pub(crate) struct PhraseSet {
    nodes: Vec<PhraseNode>,
}

/// Successful phrase match.
#[derive(Debug, Clone)]
pub(crate) struct PhraseMatch {
    pub index: usize,
    pub end: usize,
    pub literal: Option<Literal>,
    /// Tokens that could have extended the phrase at `end`.
    pub continuations: BTreeSet<String>,
}

/// Phrase match failure: position and the tokens that would have been legal there.
#[derive(Debug, Clone)]
pub(crate) struct PhraseMismatch {
    pub position: usize,
    pub expected: BTreeSet<String>,
}

impl PhraseSet {
    fn new() -> Self {
        Self {
            nodes: vec![PhraseNode::default()],
        }
    }

    fn insert(&mut self, phrase: &str, index: usize) {
        let mut node = 0;
        for word in phrase.split_whitespace() {
            let edge = match slot_kind(word) {
                Some(kind) => PhraseEdge::Slot(kind),
                None => PhraseEdge::Word(word.to_string()),
            };
            node = match self.nodes[node].children.get(&edge) {
                Some(&next) => next,
                None => {
                    self.nodes.push(PhraseNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[node].children.insert(edge, next);
                    next
                }
            };
        }
        self.nodes[node].terminal = Some(index);
    }

    fn labels_at(&self, node: usize) -> BTreeSet<String> {
        self.nodes[node].children.keys().flat_map(PhraseEdge::labels).collect()
    }

    /// First tokens of every phrase in the set.
    pub fn first_labels(&self) -> BTreeSet<String> {
        self.labels_at(0)
    }

    fn step(&self, node: usize, token: &str) -> Option<(usize, Option<Literal>)> {
        let children = &self.nodes[node].children;
        if let Some(&next) = children.get(&PhraseEdge::Word(token.to_string())) {
            return Some((next, None));
        }
        for kind in [OperandKind::Numeric, OperandKind::Textual, OperandKind::Boolean] {
            if let Some(&next) = children.get(&PhraseEdge::Slot(kind)) {
                if let Some(lit) = literal_from_token(token, kind) {
                    return Some((next, Some(lit)));
                }
            }
        }
        None
    }

    /// Greedy longest match starting at `start`.
    pub fn match_at<S: AsRef<str>>(&self, tokens: &[S], start: usize) -> Result<PhraseMatch, PhraseMismatch> {
        let mut node = 0;
        let mut pos = start;
        let mut literal = None;
        loop {
            let stepped = tokens.get(pos).and_then(|t| self.step(node, t.as_ref()));
            match stepped {
                Some((next, lit)) => {
                    node = next;
                    pos += 1;
                    if lit.is_some() {
                        literal = lit;
                    }
                }
                None => {
                    return match self.nodes[node].terminal {
                        Some(index) => Ok(PhraseMatch {
                            index,
                            end: pos,
                            literal,
                            continuations: self.labels_at(node),
                        }),
                        None => Err(PhraseMismatch {
                            position: pos,
                            expected: self.labels_at(node),
                        }),
                    };
                }
            }
        }
    }

    /// First (phrase, token) where a complete phrase could continue with a
    /// token that may also start whatever follows that phrase.
    fn conflicts(
        &self,
        phrases: &[String],
        follow: impl Fn(usize) -> BTreeSet<String>,
    ) -> Option<(String, String)> {
        for node in &self.nodes {
            if let Some(index) = node.terminal {
                let follow = follow(index);
                for label in node.children.keys().flat_map(PhraseEdge::labels) {
                    if follow.contains(&label) {
                        return Some((phrases[index].clone(), label));
                    }
                }
            }
        }
        None
    }
}

/// Validated CNL grammar with compiled phrase matchers.
#[derive(Debug, Clone)]
pub struct CnlGrammar {
    document: GrammarDocument,
    attributes: BTreeMap<String, Vec<String>>,
    pub(crate) subject_set: PhraseSet,
    pub(crate) attribute_sets: BTreeMap<String, PhraseSet>,
    pub(crate) comparator_set: PhraseSet,
    pub(crate) action_set: PhraseSet,
}

impl CnlGrammar {
    pub fn from_document(document: GrammarDocument) -> Result<Self, GrammarError> {
        if document.subjects.is_empty() {
            return Err(GrammarError::Empty("subjects"));
        }
        if document.comparators.is_empty() {
            return Err(GrammarError::Empty("comparators"));
        }
        if document.actions.is_empty() {
            return Err(GrammarError::Empty("actions"));
        }

        check_set("subject", document.subjects.iter(), false)?;
        let mut attributes: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for group in &document.attributes {
            if !document.subjects.contains(&group.subject) {
                return Err(GrammarError::UnknownSubject(group.subject.clone()));
            }
            attributes
                .entry(group.subject.clone())
                .or_default()
                .extend(group.phrases.iter().cloned());
        }
        for subject in &document.subjects {
            let phrases = attributes.get(subject).filter(|p| !p.is_empty());
            let phrases = phrases.ok_or_else(|| GrammarError::NoAttributes(subject.clone()))?;
            check_set(&format!("attribute of {subject}"), phrases.iter(), false)?;
        }
        check_set(
            "comparator",
            document.comparators.iter().map(|c| &c.phrase),
            false,
        )?;
        check_set("action", document.actions.iter().map(|a| &a.template), true)?;
        for action in &document.actions {
            validate_action(action)?;
        }

        let mut subject_set = PhraseSet::new();
        for (i, s) in document.subjects.iter().enumerate() {
            subject_set.insert(s, i);
        }
        let mut attribute_sets = BTreeMap::new();
        for (subject, phrases) in &attributes {
            let mut set = PhraseSet::new();
            for (i, p) in phrases.iter().enumerate() {
                set.insert(p, i);
            }
            attribute_sets.insert(subject.clone(), set);
        }
        let mut comparator_set = PhraseSet::new();
        for (i, c) in document.comparators.iter().enumerate() {
            comparator_set.insert(&c.phrase, i);
        }
        let mut action_set = PhraseSet::new();
        for (i, a) in document.actions.iter().enumerate() {
            action_set.insert(&a.template, i);
        }

        // Greedy matching is exact only if a finished phrase never continues
        // with a token that could also start the next element.
        let subject_follow = |i: usize| attribute_sets[&document.subjects[i]].first_labels();
        if let Some((phrase, token)) = subject_set.conflicts(&document.subjects, subject_follow) {
            return Err(GrammarError::Ambiguous { phrase, token });
        }
        let comparator_first = comparator_set.first_labels();
        for (subject, set) in &attribute_sets {
            if let Some((phrase, token)) = set.conflicts(&attributes[subject], |_| comparator_first.clone()) {
                return Err(GrammarError::Ambiguous { phrase, token });
            }
        }

        Ok(Self {
            document,
            attributes,
            subject_set,
            attribute_sets,
            comparator_set,
            action_set,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, GrammarError> {
        Self::from_document(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GrammarError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The loan-approval grammar shipped with the crate.
    pub fn miniloan() -> Self {
        Self::from_json(MINILOAN_JSON).expect("bundled grammar is valid")
    }

    pub fn document(&self) -> &GrammarDocument {
        &self.document
    }

    pub fn subjects(&self) -> &[String] {
        &self.document.subjects
    }

    pub fn attributes_of(&self, subject: &str) -> &[String] {
        self.attributes.get(subject).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn comparators(&self) -> &[ComparatorDef] {
        &self.document.comparators
    }

    pub fn comparator(&self, phrase: &str) -> Option<&ComparatorDef> {
        self.document.comparators.iter().find(|c| c.phrase == phrase)
    }

    pub fn actions(&self) -> &[ActionDef] {
        &self.document.actions
    }

    pub fn action(&self, template: &str) -> Option<&ActionDef> {
        self.document.actions.iter().find(|a| a.template == template)
    }

    /// Every word that can appear in a rule, excluding literals.
    pub fn vocabulary(&self) -> BTreeSet<String> {
        let mut vocab: BTreeSet<String> = ["if", "then", "and", "or"].iter().map(|s| s.to_string()).collect();
        let phrases = self
            .document
            .subjects
            .iter()
            .chain(self.attributes.values().flatten())
            .chain(self.document.comparators.iter().map(|c| &c.phrase))
            .chain(self.document.actions.iter().map(|a| &a.template));
        for phrase in phrases {
            for word in phrase.split_whitespace() {
                if slot_kind(word).is_none() {
                    vocab.insert(word.to_string());
                }
            }
        }
        if self.document.comparators.iter().any(|c| c.operand == OperandKind::Boolean)
            || self.document.actions.iter().any(|a| a.slot() == Some(OperandKind::Boolean))
        {
            vocab.insert("true".into());
            vocab.insert("false".into());
        }
        vocab
    }
}

fn check_set<'a>(
    set: &str,
    phrases: impl Iterator<Item = &'a String>,
    allow_slots: bool,
) -> Result<(), GrammarError> {
    let mut seen = BTreeSet::new();
    for phrase in phrases {
        validate_phrase(phrase, allow_slots)?;
        if !seen.insert(phrase.as_str()) {
            return Err(GrammarError::Duplicate {
                set: set.to_string(),
                phrase: phrase.clone(),
            });
        }
    }
    Ok(())
}

fn validate_phrase(phrase: &str, allow_slots: bool) -> Result<(), GrammarError> {
    let invalid = |reason: &str| GrammarError::InvalidPhrase {
        phrase: phrase.to_string(),
        reason: reason.to_string(),
    };
    let words: Vec<&str> = phrase.split_whitespace().collect();
    if words.is_empty() {
        return Err(invalid("empty"));
    }
    if words.join(" ") != phrase {
        return Err(invalid("must be single-space separated"));
    }
    let tokens = tokenize_strings(phrase).map_err(|_| invalid("contains a quote"))?;
    let mismatch = tokens
        .iter()
        .zip(&words)
        .any(|(t, w)| t != w && !(allow_slots && slot_kind(w).is_some()));
    if tokens.len() != words.len() || mismatch {
        return Err(invalid("must be lowercase and quote-free"));
    }
    for word in words {
        if allow_slots && slot_kind(word).is_some() {
            continue;
        }
        if word.contains('"') || word.starts_with('<') {
            return Err(invalid("contains a literal or marker token"));
        }
        if classify_literal(word).is_some() {
            return Err(invalid("contains a literal token"));
        }
        if RESERVED_WORDS.contains(&word) {
            return Err(invalid("uses a reserved word"));
        }
    }
    Ok(())
}

fn validate_action(action: &ActionDef) -> Result<(), GrammarError> {
    let invalid = |reason: &str| GrammarError::InvalidAction {
        template: action.template.clone(),
        reason: reason.to_string(),
    };
    if action.arity() > 1 {
        return Err(invalid("at most one slot is supported"));
    }
    if action.effects.is_empty() {
        return Err(invalid("no effects"));
    }
    for effect in &action.effects {
        match effect {
            EffectTemplate::Set { .. } | EffectTemplate::Message if action.arity() == 0 => {
                return Err(invalid("effect needs a slot value"));
            }
            EffectTemplate::Message if action.slot() != Some(OperandKind::Textual) => {
                return Err(invalid("message effect needs a <STR> slot"));
            }
            _ => {}
        }
    }
    Ok(())
}
