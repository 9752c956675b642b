//! Assembles trie, scorer and decoder settings from a corpus.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnl::CnlGrammar;
use crate::corpus::{NlCnlPair, PairCorpus, Split};
use crate::decoder::{beam_decode, BeamConfig, DecodeError, DecodeResult, MixtureScorer, NgramScorer, Scorer};
use crate::eval::DecoderTranslator;
use crate::lm_client::{LmClient, LmEndpointConfig, LmError, RemoteScorer};
use crate::prompt::{PromptConfig, SimilarityIndex};
use crate::trie::{GrammarLimits, MarkerPolicy, TokenTrie, TrieError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    #[default]
    Ngram,
    Mixture,
    Remote,
}

impl ScorerKind {
    pub fn label(self) -> &'static str {
        match self {
            ScorerKind::Ngram => "ngram",
            ScorerKind::Mixture => "mixture",
            ScorerKind::Remote => "remote",
        }
    }
}

/// Scorer selection. Fields that do not apply to `kind` are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSpec {
    pub kind: ScorerKind,
    /// n-gram order and add-k constant, also used inside the mixture.
    pub order: usize,
    pub k: f64,
    /// Retrieved pairs and n-gram weight for the mixture.
    pub top_k: usize,
    pub lambda: f64,
    pub endpoint: Option<LmEndpointConfig>,
    pub prompt: PromptConfig,
}

impl Default for ScorerSpec {
    fn default() -> Self {
        ScorerSpec {
            kind: ScorerKind::Ngram,
            order: NgramScorer::DEFAULT_ORDER,
            k: NgramScorer::DEFAULT_K,
            top_k: MixtureScorer::DEFAULT_K,
            lambda: MixtureScorer::DEFAULT_LAMBDA,
            endpoint: None,
            prompt: PromptConfig::default(),
        }
    }
}

impl ScorerSpec {
    pub fn of(kind: ScorerKind) -> Self {
        ScorerSpec {
            kind,
            ..ScorerSpec::default()
        }
    }

    pub fn label(&self) -> &'static str {
        self.kind.label()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scorer: ScorerSpec,
    pub beam: BeamConfig,
    pub marker_policy: MarkerPolicy,
    /// Bounds for the grammar trie scope.
    pub grammar_limits: GrammarLimits,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scorer: ScorerSpec::default(),
            beam: BeamConfig::default(),
            marker_policy: MarkerPolicy::AbstractLiterals,
            grammar_limits: GrammarLimits::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Trie(#[from] TrieError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("invalid config: {0}")]
    Config(String),
}

/// The train split, or every pair when the corpus was never split.
pub fn training_pairs(corpus: &PairCorpus) -> Vec<NlCnlPair> {
    if corpus.pairs().iter().all(|p| p.split == Split::Unassigned) {
        corpus.pairs().to_vec()
    } else {
        corpus.train().into_iter().cloned().collect()
    }
}

/// Frozen after construction; safe to share across threads.
pub struct Pipeline {
    pub grammar: Option<Arc<CnlGrammar>>,
    pub trie: Arc<TokenTrie>,
    pub scorer: Arc<dyn Scorer>,
    pub config: PipelineConfig,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("trie_statements", &self.trie.len())
            .field("config", &self.config)
            .finish()
    }
}

impl Pipeline {
    pub fn build(
        corpus: &PairCorpus,
        grammar: Option<Arc<CnlGrammar>>,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        if config.beam.beam_width == 0 || config.beam.max_length == 0 {
            return Err(PipelineError::Config("beam width and max length must be at least 1".into()));
        }
        let train = training_pairs(corpus);
        let unsplit = corpus.pairs().iter().all(|p| p.split == Split::Unassigned);
        let trie = match (config.beam.trie_scope.splits(), &grammar) {
            (None, Some(g)) => {
                if config.marker_policy != MarkerPolicy::AbstractLiterals {
                    return Err(PipelineError::Config("the grammar trie needs abstract-literals markers".into()));
                }
                TokenTrie::from_grammar(g, config.grammar_limits)?
            }
            (None, None) => return Err(PipelineError::Config("the grammar trie scope needs a grammar".into())),
            (Some(_), _) if unsplit => {
                let statements: Vec<&str> = train.iter().map(|p| p.cnl.as_str()).collect();
                TokenTrie::build(&statements, config.marker_policy)?
            }
            (Some(splits), _) => TokenTrie::build(&corpus.statements(splits), config.marker_policy)?,
        };
        let abstract_literals = config.marker_policy == MarkerPolicy::AbstractLiterals;
        let statements: Vec<&str> = train.iter().map(|p| p.cnl.as_str()).collect();

        let spec = &config.scorer;
        let scorer: Arc<dyn Scorer> = match spec.kind {
            ScorerKind::Ngram => {
                check_order(spec.order, spec.k)?;
                Arc::new(NgramScorer::train(&statements, spec.order, spec.k, abstract_literals)?)
            }
            ScorerKind::Mixture => {
                check_order(spec.order, spec.k)?;
                if !(0.0..=1.0).contains(&spec.lambda) {
                    return Err(PipelineError::Config("lambda must be in [0, 1]".into()));
                }
                let ngram = Arc::new(NgramScorer::train(&statements, spec.order, spec.k, abstract_literals)?);
                Arc::new(MixtureScorer::new(&train, spec.top_k, spec.lambda, ngram, abstract_literals)?)
            }
            ScorerKind::Remote => {
                if train.is_empty() {
                    return Err(TrieError::EmptyCorpus.into());
                }
                let endpoint = spec.endpoint.clone().unwrap_or_default();
                let client = Arc::new(LmClient::new(endpoint)?);
                Arc::new(RemoteScorer::new(client, SimilarityIndex::new(&train), spec.prompt.clone()))
            }
        };

        Ok(Pipeline {
            grammar,
            trie: Arc::new(trie),
            scorer,
            config,
        })
    }

    pub fn decode(&self, nl: &str, beam: &BeamConfig) -> Result<DecodeResult, DecodeError> {
        beam_decode(nl, self.scorer.as_ref(), Some(&self.trie), self.grammar.as_deref(), beam)
    }

    pub fn translator(&self) -> DecoderTranslator {
        self.translator_with(self.config.beam.clone())
    }

    pub fn translator_with(&self, beam: BeamConfig) -> DecoderTranslator {
        DecoderTranslator {
            name: self.config.scorer.label().to_string(),
            scorer: self.scorer.clone(),
            trie: Some(self.trie.clone()),
            grammar: self.grammar.clone(),
            config: beam,
        }
    }
}

fn check_order(order: usize, k: f64) -> Result<(), PipelineError> {
    if order == 0 || !(k > 0.0 && k.is_finite()) {
        return Err(PipelineError::Config("n-gram order must be >= 1 and k > 0".into()));
    }
    Ok(())
}
