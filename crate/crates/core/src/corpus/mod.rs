//! NL/CNL pair corpora: loading, train/test/validation splits, the limited
//! training subsample, and a synthetic generator.

mod generate;
mod io;
mod rng;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnl::CnlError;

pub use generate::{generate_synthetic, ClauseTemplates, GeneratorConfig, NumericRange, TemplateBank};
pub use io::{load_jsonl, load_tsv_adapter, save_jsonl, write_jsonl};
pub use rng::Lcg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
    #[default]
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
            Split::Unassigned => "unassigned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlCnlPair {
    pub id: String,
    pub nl: String,
    pub cnl: String,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: cnl does not parse: {error}")]
    CnlParse { line: usize, error: CnlError },
    #[error("duplicate pair id {0:?}")]
    DuplicateId(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("train split has {available} pairs, {requested} requested")]
    InsufficientTrainData { available: usize, requested: usize },
    #[error("split fractions must be non-negative and sum to 1")]
    InvalidSplitSpec,
}

/// Ordered pairs with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairCorpus {
    pairs: Vec<NlCnlPair>,
    pub provenance: String,
    /// Seed of the last split or subsample applied.
    pub seed: Option<u64>,
    /// Whether every cnl is known to parse under the grammar.
    pub grammar_bound: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
    pub validation: usize,
    pub unassigned: usize,
}

impl PairCorpus {
    pub fn new(pairs: Vec<NlCnlPair>, provenance: impl Into<String>, grammar_bound: bool) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for pair in &pairs {
            if !seen.insert(pair.id.as_str()) {
                return Err(CorpusError::DuplicateId(pair.id.clone()));
            }
        }
        Ok(Self {
            pairs,
            provenance: provenance.into(),
            seed: None,
            grammar_bound,
        })
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

    pub fn get(&self, id: &str) -> Option<&NlCnlPair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    pub fn split_pairs(&self, split: Split) -> impl Iterator<Item = &NlCnlPair> {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    pub fn train(&self) -> Vec<&NlCnlPair> {
        self.split_pairs(Split::Train).collect()
    }

    pub fn test(&self) -> Vec<&NlCnlPair> {
        self.split_pairs(Split::Test).collect()
    }

    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for p in &self.pairs {
            match p.split {
                Split::Train => c.train += 1,
                Split::Test => c.test += 1,
                Split::Validation => c.validation += 1,
                Split::Unassigned => c.unassigned += 1,
            }
        }
        c
    }

    /// CNL statements of the pairs in `splits`, in corpus order.
    pub fn statements(&self, splits: &[Split]) -> Vec<&str> {
        self.pairs
            .iter()
            .filter(|p| splits.contains(&p.split))
            .map(|p| p.cnl.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
    pub seed: u64,
}

impl SplitSpec {
    /// 70% train, 24% test, 6% validation.
    pub fn standard(seed: u64) -> Self {
        Self {
            train: 0.70,
            test: 0.24,
            validation: 0.06,
            seed,
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.train, self.test, self.validation];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidSplitSpec);
        }
        Ok(())
    }

    /// (train, test, validation) sizes for `n` items: test and validation
    /// get the floors of their fractions, train takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // the epsilon absorbs products like 0.06 * 50 landing just under an integer
        let floor = |f: f64| ((f * n as f64) + 1e-9).floor() as usize;
        let test = floor(self.test).min(n);
        let validation = floor(self.validation).min(n - test);
        (n - test - validation, test, validation)
    }
}

/// Shuffles with the seeded generator and assigns splits by position.
pub fn split(corpus: &PairCorpus, spec: &SplitSpec) -> Result<PairCorpus, CorpusError> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let n = corpus.len();
    let (train, test, _) = spec.sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    Lcg::new(spec.seed).shuffle(&mut order);

    let mut out = corpus.clone();
    for (rank, &index) in order.iter().enumerate() {
        out.pairs[index].split = if rank < train {
            Split::Train
        } else if rank < train + test {
            Split::Test
        } else {
            Split::Validation
        };
    }
    out.seed = Some(spec.seed);
    Ok(out)
}

/// Keeps a uniform sample of `n` train pairs; the other train pairs become
/// unassigned. Test and validation are untouched.
pub fn sample_limited(corpus: &PairCorpus, n: usize, seed: u64) -> Result<PairCorpus, CorpusError> {
    let mut train: Vec<usize> = (0..corpus.len())
        .filter(|&i| corpus.pairs[i].split == Split::Train)
        .collect();
    if train.len() < n {
        return Err(CorpusError::InsufficientTrainData {
            available: train.len(),
            requested: n,
        });
    }
    let mut rng = Lcg::new(seed);
    // partial Fisher-Yates: the first n slots end up a uniform sample
    for i in 0..n {
        let j = i + rng.below(train.len() - i);
        train.swap(i, j);
    }
    let mut out = corpus.clone();
    for &dropped in &train[n..] {
        out.pairs[dropped].split = Split::Unassigned;
    }
    out.seed = Some(seed);
    Ok(out)
}
