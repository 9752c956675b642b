//! Prefix tree over tokenized CNL statements, used as the decoding constraint.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnl::{abstract_token, join_tokens, tokenize_strings, CnlGrammar, OperandKind, TokenizeError, NUM_MARKER, STR_MARKER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkerPolicy {
    /// Literals are stored verbatim.
    #[default]
    None,
    /// Numeric tokens become `<NUM>` and quoted tokens `<STR>` before insertion.
    AbstractLiterals,
}

#[derive(Debug, Error)]
pub enum TrieError {
    #[error("cannot build a trie from an empty corpus")]
    EmptyCorpus,
    #[error("statement {index}: {source}")]
    Tokenize {
        index: usize,
        #[source]
        source: TokenizeError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("grammar derives {0} statements under these limits")]
    TooLarge(u128),
}

/// Bounds for enumerating a grammar's statements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrammarLimits {
    pub max_clauses: usize,
    pub max_actions: usize,
    pub max_statements: usize,
}

impl Default for GrammarLimits {
    fn default() -> Self {
        GrammarLimits {
            max_clauses: 2,
            max_actions: 1,
            max_statements: 500_000,
        }
    }
}

fn slot_fillers(kind: OperandKind) -> &'static [&'static str] {
    match kind {
        OperandKind::Numeric => &[NUM_MARKER],
        OperandKind::Textual => &[STR_MARKER],
        OperandKind::Boolean => &["true", "false"],
    }
}

/// Token sequences for every clause and every action the grammar allows.
fn grammar_parts(grammar: &CnlGrammar) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let mut clauses = Vec::new();
    for subject in grammar.subjects() {
        for attribute in grammar.attributes_of(subject) {
            for comparator in grammar.comparators() {
                for filler in slot_fillers(comparator.operand) {
                    let mut c = words(subject);
                    c.extend(words(attribute));
                    c.extend(words(&comparator.phrase));
                    c.push(filler.to_string());
                    clauses.push(c);
                }
            }
        }
    }
    let mut actions = Vec::new();
    for action in grammar.actions() {
        let fillers = action.slot().map_or(&[""][..], slot_fillers);
        for filler in fillers {
            let a: Vec<String> = action
                .template
                .split_whitespace()
                .map(|w| match w {
                    "<NUM>" | "<STR>" | "<BOOL>" => filler.to_string(),
                    _ => w.to_string(),
                })
                .collect();
            actions.push(a);
        }
    }
    (clauses, actions)
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<String, usize>,
    terminal: bool,
}

/// Continuations of a prefix: the edge labels leaving its node and whether
/// the prefix is itself a complete statement.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct NextTokens {
    pub tokens: BTreeSet<String>,
    pub end: bool,
}

impl NextTokens {
    pub fn is_dead_end(&self) -> bool {
        self.tokens.is_empty() && !self.end
    }
}

/// Frozen prefix tree. Children are kept sorted by token text.
#[derive(Debug, Clone)]
pub struct TokenTrie {
    nodes: Vec<Node>,
    policy: MarkerPolicy,
    vocabulary: BTreeSet<String>,
    statements: usize,
}

impl TokenTrie {
    /// Tokenizes every statement and inserts it.
    pub fn build<S: AsRef<str>>(statements: &[S], policy: MarkerPolicy) -> Result<Self, TrieError> {
        let sequences = statements
            .iter()
            .enumerate()
            .map(|(index, s)| tokenize_strings(s.as_ref()).map_err(|source| TrieError::Tokenize { index, source }))
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_sequences(&sequences, policy)
    }

    /// Inserts already tokenized sequences.
    pub fn from_sequences<S: AsRef<str>>(sequences: &[Vec<S>], policy: MarkerPolicy) -> Result<Self, TrieError> {
        if sequences.is_empty() {
            return Err(TrieError::EmptyCorpus);
        }
        let mut trie = TokenTrie {
            nodes: vec![Node::default()],
            policy,
            vocabulary: BTreeSet::new(),
            statements: 0,
        };
        for seq in sequences {
            trie.insert(seq);
        }
        Ok(trie)
    }

    /// Every statement the grammar derives within `limits`, literal slots
    /// as markers. Connectives between clauses range over both `and` and `or`.
    pub fn from_grammar(grammar: &CnlGrammar, limits: GrammarLimits) -> Result<Self, TrieError> {
        let (clauses, actions) = grammar_parts(grammar);
        let (c, a) = (clauses.len() as u128, actions.len() as u128);
        let conditions: u128 = (1..=limits.max_clauses as u32).map(|n| c.pow(n) * 2u128.pow(n - 1)).sum();
        let action_lists: u128 = (1..=limits.max_actions as u32).map(|n| a.pow(n)).sum();
        let total = conditions.saturating_mul(action_lists);
        if total == 0 {
            return Err(TrieError::EmptyCorpus);
        }
        if total > limits.max_statements as u128 {
            return Err(TrieError::TooLarge(total));
        }

        let mut trie = TokenTrie {
            nodes: vec![Node::default()],
            policy: MarkerPolicy::AbstractLiterals,
            vocabulary: BTreeSet::new(),
            statements: 0,
        };
        let mut action_seqs: Vec<Vec<String>> = Vec::new();
        let mut frontier: Vec<Vec<String>> = vec![Vec::new()];
        for _ in 0..limits.max_actions {
            let mut next = Vec::new();
            for prefix in &frontier {
                for action in &actions {
                    let mut seq = prefix.clone();
                    if !seq.is_empty() {
                        seq.push("and".into());
                    }
                    seq.extend(action.iter().cloned());
                    next.push(seq);
                }
            }
            action_seqs.extend(next.iter().cloned());
            frontier = next;
        }

        let mut path = vec!["if".to_string()];
        trie.extend_conditions(&clauses, &action_seqs, limits.max_clauses, &mut path);
        Ok(trie)
    }

    fn extend_conditions(
        &mut self,
        clauses: &[Vec<String>],
        actions: &[Vec<String>],
        remaining: usize,
        path: &mut Vec<String>,
    ) {
        for clause in clauses {
            let mark = path.len();
            path.extend(clause.iter().cloned());
            path.push("then".into());
            for action in actions {
                let base = path.len();
                path.extend(action.iter().cloned());
                self.insert(path);
                path.truncate(base);
            }
            path.pop();
            if remaining > 1 {
                for connective in ["and", "or"] {
                    path.push(connective.into());
                    self.extend_conditions(clauses, actions, remaining - 1, path);
                    path.pop();
                }
            }
            path.truncate(mark);
        }
    }

    fn insert<S: AsRef<str>>(&mut self, sequence: &[S]) {
        let mut node = 0;
        for token in sequence {
            let label = self.edge_label(token.as_ref()).to_string();
            node = match self.nodes[node].children.get(&label) {
                Some(&next) => next,
                None => {
                    self.nodes.push(Node::default());
                    let next = self.nodes.len() - 1;
                    self.vocabulary.insert(label.clone());
                    self.nodes[node].children.insert(label, next);
                    next
                }
            };
        }
        if !self.nodes[node].terminal {
            self.nodes[node].terminal = true;
            self.statements += 1;
        }
    }

    fn edge_label<'a>(&self, token: &'a str) -> &'a str {
        match self.policy {
            MarkerPolicy::None => token,
            MarkerPolicy::AbstractLiterals => abstract_token(token),
        }
    }

    /// Follows `prefix` from the root. Under `AbstractLiterals` a literal
    /// token that has no exact edge follows its marker edge instead.
    fn walk<S: AsRef<str>>(&self, prefix: &[S]) -> Option<usize> {
        let mut node = 0;
        for token in prefix {
            let token = token.as_ref();
            let children = &self.nodes[node].children;
            node = match children.get(token) {
                Some(&next) => next,
                None => *children.get(self.edge_label(token))?,
            };
        }
        Some(node)
    }

    /// Edge labels leaving the node reached by `prefix`; empty when the
    /// prefix leaves the trie.
    pub fn allowed_next<S: AsRef<str>>(&self, prefix: &[S]) -> NextTokens {
        match self.walk(prefix) {
            Some(node) => NextTokens {
                tokens: self.nodes[node].children.keys().cloned().collect(),
                end: self.nodes[node].terminal,
            },
            None => NextTokens::default(),
        }
    }

    /// True iff `sequence` is a complete inserted statement.
    pub fn accepts<S: AsRef<str>>(&self, sequence: &[S]) -> bool {
        self.walk(sequence).is_some_and(|n| self.nodes[n].terminal)
    }

    pub fn policy(&self) -> MarkerPolicy {
        self.policy
    }

    /// Every edge label in the trie.
    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    /// Number of distinct statements.
    pub fn len(&self) -> usize {
        self.statements
    }

    pub fn is_empty(&self) -> bool {
        self.statements == 0
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// All accepted sequences in sorted order.
    pub fn sequences(&self) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        self.collect(0, &mut path, &mut out);
        out
    }

    fn collect(&self, node: usize, path: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
        if self.nodes[node].terminal {
            out.push(path.clone());
        }
        for (label, &child) in &self.nodes[node].children {
            path.push(label.clone());
            self.collect(child, path, out);
            path.pop();
        }
    }

    /// Writes one statement per line.
    pub fn write_statements<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for seq in self.sequences() {
            writeln!(out, "{}", join_tokens(&seq))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut out = std::io::BufWriter::new(file);
        self.write_statements(&mut out)?;
        out.flush()
    }

    /// Rebuilds a trie from a file with one statement per line.
    pub fn load(path: impl AsRef<Path>, policy: MarkerPolicy) -> Result<Self, TrieError> {
        let file = std::fs::File::open(path)?;
        let mut lines = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                lines.push(line);
            }
        }
        Self::build(&lines, policy)
    }
}

/// Structural equality: same labelled paths and terminal flags.
impl PartialEq for TokenTrie {
    fn eq(&self, other: &Self) -> bool {
        fn same(a: &TokenTrie, an: usize, b: &TokenTrie, bn: usize) -> bool {
            let (x, y) = (&a.nodes[an], &b.nodes[bn]);
            x.terminal == y.terminal
                && x.children.len() == y.children.len()
                && x
                    .children
                    .iter()
                    .zip(&y.children)
                    .all(|((lx, cx), (ly, cy))| lx == ly && same(a, *cx, b, *cy))
        }
        self.policy == other.policy && same(self, 0, other, 0)
    }
}

impl Eq for TokenTrie {}
