//! Few-shot prompt construction from the training pairs most similar to a
//! query, packed under a token budget.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{NlCnlPair, PairCorpus, Split};

/// Lowercased alphanumeric word tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn term_counts(text: &str) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for w in word_tokens(text) {
        *counts.entry(w).or_insert(0.0) += 1.0;
    }
    counts
}

/// One ranked pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ranked {
    /// Position of the pair in the indexed list.
    pub index: usize,
    pub id: String,
    pub similarity: f64,
}

/// TF-IDF vectors over a fixed list of pairs, compared by cosine.
///
/// Term weight is raw count times `ln((1 + N) / (1 + df)) + 1`.
#[derive(Debug, Clone)]
pub struct SimilarityIndex {
    pairs: Vec<NlCnlPair>,
    idf: HashMap<String, f64>,
    unseen_idf: f64,
    docs: Vec<(BTreeMap<String, f64>, f64)>,
}

impl SimilarityIndex {
    pub fn new<'a>(pairs: impl IntoIterator<Item = &'a NlCnlPair>) -> Self {
        let pairs: Vec<NlCnlPair> = pairs.into_iter().cloned().collect();
        let counts: Vec<BTreeMap<String, f64>> = pairs.iter().map(|p| term_counts(&p.nl)).collect();
        let n = pairs.len() as f64;
        let mut df: HashMap<String, f64> = HashMap::new();
        for doc in &counts {
            for term in doc.keys() {
                *df.entry(term.clone()).or_insert(0.0) += 1.0;
            }
        }
        let idf: HashMap<String, f64> = df
            .into_iter()
            .map(|(t, d)| (t, ((1.0 + n) / (1.0 + d)).ln() + 1.0))
            .collect();
        let docs = counts
            .into_iter()
            .map(|doc| {
                let weighted: BTreeMap<String, f64> = doc.into_iter().map(|(t, c)| {
                    let w = c * idf[&t];
                    (t, w)
                }).collect();
                let norm = weighted.values().map(|w| w * w).sum::<f64>().sqrt();
                (weighted, norm)
            })
            .collect();
        Self {
            pairs,
            idf,
            unseen_idf: (1.0 + n).ln() + 1.0,
            docs,
        }
    }

    /// Index over the train split.
    pub fn for_train(corpus: &PairCorpus) -> Self {
        Self::new(corpus.split_pairs(Split::Train))
    }

    pub fn pairs(&self) -> &[NlCnlPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn similarity(&self, query: &str, index: usize) -> f64 {
        let q = self.query_vector(query);
        self.cosine(&q, index)
    }

    fn query_vector(&self, query: &str) -> (BTreeMap<String, f64>, f64) {
        let weighted: BTreeMap<String, f64> = term_counts(query)
            .into_iter()
            .map(|(t, c)| {
                let idf = self.idf.get(&t).copied().unwrap_or(self.unseen_idf);
                (t, c * idf)
            })
            .collect();
        let norm = weighted.values().map(|w| w * w).sum::<f64>().sqrt();
        (weighted, norm)
    }

    fn cosine(&self, query: &(BTreeMap<String, f64>, f64), index: usize) -> f64 {
        let (doc, doc_norm) = &self.docs[index];
        let (q, q_norm) = query;
        if *doc_norm == 0.0 || *q_norm == 0.0 {
            return 0.0;
        }
        let dot: f64 = q.iter().filter_map(|(t, w)| doc.get(t).map(|d| w * d)).sum();
        (dot / (doc_norm * q_norm)).clamp(0.0, 1.0)
    }

    /// All pairs by descending similarity; ties keep index order.
    pub fn rank(&self, query: &str) -> Vec<Ranked> {
        let q = self.query_vector(query);
        let mut ranked: Vec<Ranked> = (0..self.pairs.len())
            .map(|index| Ranked {
                index,
                id: self.pairs[index].id.clone(),
                similarity: self.cosine(&q, index),
            })
            .collect();
        ranked.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
        ranked
    }

    /// The `k` most similar pairs.
    pub fn top_k(&self, query: &str, k: usize) -> Vec<Ranked> {
        let mut ranked = self.rank(query);
        ranked.truncate(k);
        ranked
    }
}

/// Ranks the train split of `corpus` against `query`.
pub fn rank_by_similarity(query: &str, corpus: &PairCorpus) -> Vec<Ranked> {
    SimilarityIndex::for_train(corpus).rank(query)
}

/// Counts prompt tokens. The default counts whitespace-separated words;
/// a model-specific subword counter can be substituted.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub context_budget: usize,
    pub reserved_output: usize,
    /// `{nl}` and `{cnl}` slots.
    pub pair_template: String,
    /// `{query}` slot.
    pub query_template: String,
    /// Inserted after every rendered pair.
    pub separator: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            context_budget: 2048,
            reserved_output: 64,
            pair_template: "NL: {nl}\nCNL: {cnl}\n\n".into(),
            query_template: "NL: {query}\nCNL:".into(),
            separator: String::new(),
        }
    }
}

impl PromptConfig {
    pub fn render_pair(&self, pair: &NlCnlPair) -> String {
        let mut s = self.pair_template.replace("{nl}", &pair.nl).replace("{cnl}", &pair.cnl);
        s.push_str(&self.separator);
        s
    }

    pub fn render_query(&self, query: &str) -> String {
        self.query_template.replace("{query}", query)
    }

    /// Tokens available for the examples plus the query.
    pub fn available(&self) -> Option<usize> {
        self.context_budget.checked_sub(self.reserved_output).filter(|&n| n > 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    /// Ids of the included pairs in prompt order: least similar first.
    pub pair_ids: Vec<String>,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("budget of {available} tokens cannot hold the query ({needed} tokens)")]
    BudgetTooSmall { available: usize, needed: usize },
}

/// Builds prompts against a fixed similarity index.
pub struct PromptBuilder<'a> {
    index: &'a SimilarityIndex,
    config: &'a PromptConfig,
    counter: &'a dyn TokenCounter,
}

impl<'a> PromptBuilder<'a> {
    pub fn new(index: &'a SimilarityIndex, config: &'a PromptConfig, counter: &'a dyn TokenCounter) -> Self {
        Self { index, config, counter }
    }

    /// Appends ranked pairs while they fit, stopping at the first that does
    /// not. The query goes last and the most similar pair sits next to it.
    pub fn build(&self, query: &str) -> Result<Prompt, PromptError> {
        let query_text = self.config.render_query(query);
        let needed = self.counter.count(&query_text);
        let available = self.config.available().unwrap_or(0);
        if needed > available {
            return Err(PromptError::BudgetTooSmall { available, needed });
        }

        let mut running = needed;
        let mut included: Vec<(usize, String)> = Vec::new();
        for ranked in self.index.rank(query) {
            let rendered = self.config.render_pair(&self.index.pairs()[ranked.index]);
            let cost = self.counter.count(&rendered);
            if running + cost > available {
                break;
            }
            running += cost;
            included.push((ranked.index, rendered));
        }

        loop {
            let text: String = included
                .iter()
                .rev()
                .map(|(_, r)| r.as_str())
                .chain(std::iter::once(query_text.as_str()))
                .collect();
            let token_count = self.counter.count(&text);
            // counters that are not additive over concatenation may overshoot
            if token_count <= available || included.is_empty() {
                let pair_ids = included
                    .iter()
                    .rev()
                    .map(|(i, _)| self.index.pairs()[*i].id.clone())
                    .collect();
                return Ok(Prompt {
                    text,
                    pair_ids,
                    token_count,
                });
            }
            included.pop();
        }
    }
}

/// Ranks the train split of `corpus` and builds a prompt with the default
/// whitespace counter.
pub fn build_prompt(query: &str, corpus: &PairCorpus, config: &PromptConfig) -> Result<Prompt, PromptError> {
    let index = SimilarityIndex::for_train(corpus);
    PromptBuilder::new(&index, config, &WhitespaceCounter).build(query)
}
