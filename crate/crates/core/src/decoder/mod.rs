//! Beam search over CNL tokens, optionally masked by a [`TokenTrie`].

mod marker;
mod mixture;
mod ngram;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnl::{join_tokens, parse, CnlGrammar, CnlToken, MarkerKind};
use crate::corpus::Split;
use crate::trie::TokenTrie;

pub use marker::{expand_marker, NoCandidates};
pub use mixture::MixtureScorer;
pub use ngram::NgramScorer;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Log-probabilities for the next token. Tokens absent from `tokens` have
/// probability zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NextTokenDistribution {
    pub tokens: BTreeMap<String, f64>,
    pub eos: f64,
}

impl NextTokenDistribution {
    pub fn total_probability(&self) -> f64 {
        self.tokens.values().map(|lp| lp.exp()).sum::<f64>() + self.eos.exp()
    }

    pub fn log_prob(&self, token: &str) -> f64 {
        if token == EOS {
            self.eos
        } else {
            self.tokens.get(token).copied().unwrap_or(f64::NEG_INFINITY)
        }
    }

    /// Rescales so probabilities sum to one. An all-zero distribution is
    /// left unchanged.
    pub fn normalized(mut self) -> Self {
        let lse = log_sum_exp(self.tokens.values().copied().chain([self.eos]));
        if lse.is_finite() {
            for lp in self.tokens.values_mut() {
                *lp -= lse;
            }
            self.eos -= lse;
        }
        self
    }
}

pub(crate) fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("scoring endpoint unavailable: {0}")]
    EndpointUnavailable(String),
    #[error("malformed scorer response: {0}")]
    MalformedResponse(String),
    #[error("scorer rejected request: {0}")]
    Rejected(String),
}

/// Anything that can produce a next-token distribution given the NL source
/// and the CNL prefix so far. Prefixes use markers in place of literals when
/// the decoder expands them.
pub trait Scorer: Send + Sync {
    fn score_next(&self, source: &str, prefix: &[String]) -> Result<NextTokenDistribution, ScoreError>;
}

impl<T: Scorer + ?Sized> Scorer for std::sync::Arc<T> {
    fn score_next(&self, source: &str, prefix: &[String]) -> Result<NextTokenDistribution, ScoreError> {
        (**self).score_next(source, prefix)
    }
}

impl<T: Scorer + ?Sized> Scorer for Box<T> {
    fn score_next(&self, source: &str, prefix: &[String]) -> Result<NextTokenDistribution, ScoreError> {
        (**self).score_next(source, prefix)
    }
}

/// What feeds the constraint trie: corpus statements from some splits, or
/// the grammar itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrieScope {
    #[default]
    TrainOnly,
    All,
    Grammar,
}

impl TrieScope {
    /// Corpus splits for corpus-built tries; `None` for the grammar trie.
    pub fn splits(self) -> Option<&'static [Split]> {
        match self {
            TrieScope::TrainOnly => Some(&[Split::Train]),
            TrieScope::All => Some(&[Split::Train, Split::Test, Split::Validation, Split::Unassigned]),
            TrieScope::Grammar => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub max_length: usize,
    pub constrained: bool,
    pub trie_scope: TrieScope,
    /// Replace `<NUM>` / `<STR>` with literals copied from the source.
    pub literal_expansion: bool,
    /// Log-probability added when a marker has nothing to copy.
    pub missing_literal_penalty: f64,
    /// Rescale the scorer's mass over the allowed set when constrained;
    /// otherwise disallowed tokens are only masked out.
    pub renormalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_width: 4,
            max_length: 64,
            constrained: true,
            trie_scope: TrieScope::TrainOnly,
            literal_expansion: true,
            missing_literal_penalty: -10.0,
            renormalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub text: String,
    pub log_prob: f64,
    /// `log_prob / max(1, len)`, the ranking key.
    pub score: f64,
    pub finished: bool,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Finished hypotheses, best first.
    pub hypotheses: Vec<Hypothesis>,
    /// Unfinished beams left at max length or at a dead end, best first.
    pub partials: Vec<Hypothesis>,
    pub constraint_exhausted: bool,
}

impl DecodeResult {
    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    /// Best finished hypothesis, else best partial.
    pub fn best_any(&self) -> Option<&Hypothesis> {
        self.hypotheses.first().or(self.partials.first())
    }
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("constrained decoding needs a trie")]
    MissingTrie,
    #[error("beam width must be at least 1")]
    ZeroBeam,
}

#[derive(Debug, Clone)]
struct Beam {
    surface: Vec<String>,
    view: Vec<String>,
    log_prob: f64,
    used: BTreeSet<String>,
    placeholder: bool,
}

impl Beam {
    fn score(&self) -> f64 {
        self.log_prob / self.surface.len().max(1) as f64
    }
}

struct Candidate {
    beam: Beam,
    finished: bool,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.beam
        .score()
        .total_cmp(&a.beam.score())
        .then_with(|| a.beam.surface.cmp(&b.beam.surface))
        .then_with(|| a.beam.surface.len().cmp(&b.beam.surface.len()))
        .then_with(|| b.finished.cmp(&a.finished))
}

/// Next-step options for one beam: `None` is end of sequence.
fn options(
    dist: &NextTokenDistribution,
    trie: Option<&TokenTrie>,
    view: &[String],
    renormalize: bool,
) -> Option<Vec<(Option<String>, f64)>> {
    let Some(trie) = trie else {
        let mut out: Vec<(Option<String>, f64)> = dist
            .tokens
            .iter()
            .filter(|(_, lp)| lp.is_finite())
            .map(|(t, lp)| (Some(t.clone()), *lp))
            .collect();
        if dist.eos.is_finite() {
            out.push((None, dist.eos));
        }
        return Some(out);
    };

    let allowed = trie.allowed_next(view);
    if allowed.is_dead_end() {
        return None;
    }
    let mut raw: Vec<(Option<String>, f64)> = allowed
        .tokens
        .iter()
        .map(|t| (Some(t.clone()), dist.log_prob(t)))
        .collect();
    if allowed.end {
        raw.push((None, dist.eos));
    }
    let mass = log_sum_exp(raw.iter().map(|(_, lp)| *lp));
    if mass.is_finite() {
        let shift = if renormalize { mass } else { 0.0 };
        Some(
            raw.into_iter()
                .filter(|(_, lp)| lp.is_finite())
                .map(|(t, lp)| (t, lp - shift))
                .collect(),
        )
    } else {
        let uniform = -(raw.len() as f64).ln();
        Some(raw.into_iter().map(|(t, _)| (t, uniform)).collect())
    }
}

fn extend(beam: &Beam, token: String, lp: f64, source: &str, config: &BeamConfig) -> Vec<Beam> {
    let kind = MarkerKind::from_marker(&token).filter(|_| config.literal_expansion);
    let Some(kind) = kind else {
        let mut next = beam.clone();
        next.surface.push(token.clone());
        next.view.push(token);
        next.log_prob += lp;
        return vec![next];
    };
    match expand_marker(source, kind) {
        Ok(all) => {
            let unused: Vec<String> = all.iter().filter(|c| !beam.used.contains(*c)).cloned().collect();
            let pool = if unused.is_empty() { all } else { unused };
            let share = -(pool.len() as f64).ln();
            pool.into_iter()
                .map(|literal| {
                    let mut next = beam.clone();
                    next.used.insert(literal.clone());
                    next.surface.push(literal);
                    next.view.push(token.clone());
                    next.log_prob += lp + share;
                    next
                })
                .collect()
        }
        Err(_) => {
            let mut next = beam.clone();
            next.surface.push(format!("{}-missing>", token.trim_end_matches('>')));
            next.view.push(token);
            next.log_prob += lp + config.missing_literal_penalty;
            next.placeholder = true;
            vec![next]
        }
    }
}

fn finish(beam: Beam, finished: bool, trie: Option<&TokenTrie>, grammar: Option<&CnlGrammar>) -> Hypothesis {
    let valid = !beam.placeholder
        && finished
        && match (grammar, trie) {
            (Some(g), _) => {
                let tokens: Vec<CnlToken> = beam.surface.iter().map(|t| CnlToken::new(t.clone())).collect();
                parse(&tokens, g).is_ok()
            }
            (None, Some(t)) => t.accepts(&beam.view),
            (None, None) => true,
        };
    Hypothesis {
        text: join_tokens(&beam.surface),
        score: beam.score(),
        tokens: beam.surface,
        log_prob: beam.log_prob,
        finished,
        valid,
    }
}

/// Beam search from the empty prefix.
///
/// When `config.constrained` every step is restricted to the trie's
/// `allowed_next` set and the scorer's mass is renormalized over it (uniform
/// if the scorer gives the whole set zero probability). `grammar`, when
/// given, decides the `valid` flag; otherwise trie acceptance does.
pub fn beam_decode(
    source: &str,
    scorer: &dyn Scorer,
    trie: Option<&TokenTrie>,
    grammar: Option<&CnlGrammar>,
    config: &BeamConfig,
) -> Result<DecodeResult, DecodeError> {
    if config.beam_width == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    let mask = if config.constrained {
        Some(trie.ok_or(DecodeError::MissingTrie)?)
    } else {
        None
    };

    let mut live = vec![Beam {
        surface: Vec::new(),
        view: Vec::new(),
        log_prob: 0.0,
        used: BTreeSet::new(),
        placeholder: false,
    }];
    let mut finished: Vec<Beam> = Vec::new();
    let mut stuck: Vec<Beam> = Vec::new();

    for _ in 0..config.max_length {
        if live.is_empty() {
            break;
        }
        let mut pool: Vec<Candidate> = Vec::new();
        for beam in &live {
            let dist = scorer.score_next(source, &beam.view)?;
            let Some(opts) = options(&dist, mask, &beam.view, config.renormalize) else {
                stuck.push(beam.clone());
                continue;
            };
            let mut local: Vec<Candidate> = Vec::new();
            for (token, lp) in opts {
                match token {
                    None => {
                        let mut done = beam.clone();
                        done.log_prob += lp;
                        local.push(Candidate { beam: done, finished: true });
                    }
                    Some(t) => {
                        for next in extend(beam, t, lp, source, config) {
                            local.push(Candidate { beam: next, finished: false });
                        }
                    }
                }
            }
            local.sort_by(rank);
            local.truncate(config.beam_width);
            pool.extend(local);
        }
        pool.sort_by(rank);
        pool.truncate(config.beam_width);
        live = Vec::new();
        for c in pool {
            if c.finished {
                finished.push(c.beam);
            } else {
                live.push(c.beam);
            }
        }
    }

    let constraint_exhausted = finished.is_empty() && live.is_empty() && !stuck.is_empty();
    let sort = |mut v: Vec<Hypothesis>| {
        v.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.tokens.cmp(&b.tokens))
                .then_with(|| a.tokens.len().cmp(&b.tokens.len()))
        });
        v
    };
    let hypotheses = sort(finished.into_iter().map(|b| finish(b, true, mask, grammar)).collect());
    let partials = sort(
        live.into_iter()
            .chain(stuck)
            .map(|b| finish(b, false, mask, grammar))
            .collect(),
    );
    Ok(DecodeResult {
        hypotheses,
        partials,
        constraint_exhausted,
    })
}
