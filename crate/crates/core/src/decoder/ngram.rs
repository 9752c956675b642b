use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::{NextTokenDistribution, ScoreError, Scorer, BOS};
use crate::cnl::{abstract_token, tokenize_strings};
use crate::trie::TrieError;

/// Add-k smoothed n-gram model over CNL tokens. Ignores the NL source.
#[derive(Debug, Clone)]
pub struct NgramScorer {
    order: usize,
    k: f64,
    abstract_literals: bool,
    vocabulary: BTreeSet<String>,
    /// context -> (next token or `None` for end of sequence) -> count
    counts: HashMap<Vec<String>, HashMap<Option<String>, f64>>,
}

impl NgramScorer {
    pub const DEFAULT_ORDER: usize = 3;
    pub const DEFAULT_K: f64 = 0.1;

    /// Trains on tokenized statements. With `abstract_literals`, numbers and
    /// quoted strings are counted as `<NUM>` / `<STR>`.
    pub fn train<S: AsRef<str>>(
        statements: &[S],
        order: usize,
        k: f64,
        abstract_literals: bool,
    ) -> Result<Self, TrieError> {
        assert!(order >= 1, "n-gram order must be at least 1");
        if statements.is_empty() {
            return Err(TrieError::EmptyCorpus);
        }
        let mut model = NgramScorer {
            order,
            k,
            abstract_literals,
            vocabulary: BTreeSet::new(),
            counts: HashMap::new(),
        };
        for (index, s) in statements.iter().enumerate() {
            let tokens = tokenize_strings(s.as_ref()).map_err(|source| TrieError::Tokenize { index, source })?;
            let tokens: Vec<String> = tokens.iter().map(|t| model.view(t)).collect();
            model.vocabulary.extend(tokens.iter().cloned());
            for i in 0..=tokens.len() {
                let context = model.context(&tokens[..i]);
                let next = tokens.get(i).cloned();
                *model.counts.entry(context).or_default().entry(next).or_insert(0.0) += 1.0;
            }
        }
        Ok(model)
    }

    /// Order 3, k = 0.1, literals kept verbatim.
    pub fn with_defaults<S: AsRef<str>>(statements: &[S]) -> Result<Self, TrieError> {
        Self::train(statements, Self::DEFAULT_ORDER, Self::DEFAULT_K, false)
    }

    fn view(&self, token: &str) -> String {
        if self.abstract_literals {
            abstract_token(token).to_string()
        } else {
            token.to_string()
        }
    }

    /// Last `order - 1` tokens, left-padded with the start symbol.
    fn context(&self, prefix: &[String]) -> Vec<String> {
        let width = self.order - 1;
        let mut context: Vec<String> = prefix
            .iter()
            .rev()
            .take(width)
            .map(|t| self.view(t))
            .collect();
        while context.len() < width {
            context.push(BOS.to_string());
        }
        context.reverse();
        context
    }

    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    pub fn abstract_literals(&self) -> bool {
        self.abstract_literals
    }

    /// Probability of `next` (`None` = end of sequence) after `prefix`.
    pub fn probability(&self, prefix: &[String], next: Option<&str>) -> f64 {
        let v = (self.vocabulary.len() + 1) as f64;
        let context = self.context(prefix);
        let (count, total) = match self.counts.get(&context) {
            Some(row) => (
                row.get(&next.map(str::to_string)).copied().unwrap_or(0.0),
                row.values().sum::<f64>(),
            ),
            None => (0.0, 0.0),
        };
        (count + self.k) / (total + self.k * v)
    }
}

impl Scorer for NgramScorer {
    fn score_next(&self, _source: &str, prefix: &[String]) -> Result<NextTokenDistribution, ScoreError> {
        let v = (self.vocabulary.len() + 1) as f64;
        let context = self.context(prefix);
        let row = self.counts.get(&context);
        let total: f64 = row.map_or(0.0, |r| r.values().sum());
        let denom = total + self.k * v;
        let count = |next: Option<String>| row.and_then(|r| r.get(&next)).copied().unwrap_or(0.0);
        let tokens: BTreeMap<String, f64> = self
            .vocabulary
            .iter()
            .map(|t| (t.clone(), ((count(Some(t.clone())) + self.k) / denom).ln()))
            .collect();
        let eos = ((count(None) + self.k) / denom).ln();
        Ok(NextTokenDistribution { tokens, eos })
    }
}
