//! Service and command configuration, read from a JSON file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use rulewright_core::cnl::CnlGrammar;
use rulewright_core::corpus::{load_jsonl, load_tsv_adapter, split, PairCorpus, Split, SplitSpec};
use rulewright_core::decoder::BeamConfig;
use rulewright_core::pipeline::{Pipeline, PipelineConfig, ScorerSpec};
use rulewright_core::trie::{GrammarLimits, MarkerPolicy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
    /// Two columns, NL then CNL. Not grammar-bound.
    Tsv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSource {
    pub path: PathBuf,
    pub format: CorpusFormat,
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource {
            path: PathBuf::new(),
            format: CorpusFormat::Jsonl,
        }
    }
}

/// Relative paths resolve against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Grammar JSON; the bundled loan grammar when absent.
    pub grammar: Option<PathBuf>,
    /// Concatenated in order. Pair ids must stay unique across files.
    pub corpus: Vec<CorpusSource>,
    /// Split the loaded corpus with this seed when no pair carries a split.
    pub split_seed: Option<u64>,
    pub scorer: ScorerSpec,
    pub beam: BeamConfig,
    pub marker_policy: MarkerPolicy,
    pub grammar_limits: GrammarLimits,
    pub max_candidates: usize,
    /// Built authoring UI assets served under `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        ServiceConfig {
            grammar: None,
            corpus: Vec::new(),
            split_seed: None,
            scorer: pipeline.scorer,
            beam: pipeline.beam,
            marker_policy: pipeline.marker_policy,
            grammar_limits: pipeline.grammar_limits,
            max_candidates: 5,
            static_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config: ServiceConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.grammar.as_mut() {
            join(p);
        }
        if let Some(p) = self.static_dir.as_mut() {
            join(p);
        }
        for source in &mut self.corpus {
            join(&mut source.path);
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            scorer: self.scorer.clone(),
            beam: self.beam.clone(),
            marker_policy: self.marker_policy,
            grammar_limits: self.grammar_limits,
        }
    }

    pub fn load_grammar(&self) -> anyhow::Result<CnlGrammar> {
        match &self.grammar {
            Some(path) => CnlGrammar::load(path).with_context(|| format!("loading grammar {}", path.display())),
            None => Ok(CnlGrammar::miniloan()),
        }
    }

    /// `None` when no corpus is configured.
    pub fn load_corpus(&self, grammar: &CnlGrammar) -> anyhow::Result<Option<PairCorpus>> {
        if self.corpus.is_empty() {
            return Ok(None);
        }
        let mut pairs = Vec::new();
        let mut bound = true;
        let mut provenance = Vec::new();
        for source in &self.corpus {
            let part = match source.format {
                CorpusFormat::Jsonl => load_jsonl(&source.path, Some(grammar)),
                CorpusFormat::Tsv => load_tsv_adapter(&source.path),
            }
            .with_context(|| format!("loading corpus {}", source.path.display()))?;
            bound &= part.grammar_bound;
            provenance.push(part.provenance.clone());
            pairs.extend(part.pairs().iter().cloned());
        }
        let corpus = PairCorpus::new(pairs, provenance.join(","), bound)?;
        if corpus.is_empty() {
            bail!("configured corpus is empty");
        }
        let unsplit = corpus.pairs().iter().all(|p| p.split == Split::Unassigned);
        Ok(Some(match self.split_seed {
            Some(seed) if unsplit => split(&corpus, &SplitSpec::standard(seed))?,
            _ => corpus,
        }))
    }
}

/// Everything the service and the commands need, built once.
#[derive(Debug)]
pub struct Loaded {
    pub grammar: Arc<CnlGrammar>,
    pub corpus: Option<Arc<PairCorpus>>,
    pub pipeline: Option<Arc<Pipeline>>,
    pub config: ServiceConfig,
}

impl Loaded {
    pub fn build(config: ServiceConfig) -> anyhow::Result<Self> {
        let grammar = Arc::new(config.load_grammar()?);
        let corpus = config.load_corpus(&grammar)?;
        let pipeline = match &corpus {
            Some(corpus) => {
                // only grammar-bound corpora get validity checks against the grammar
                let g = corpus.grammar_bound.then(|| grammar.clone());
                Some(Arc::new(Pipeline::build(corpus, g, config.pipeline_config())?))
            }
            None => None,
        };
        Ok(Loaded {
            grammar,
            corpus: corpus.map(Arc::new),
            pipeline,
            config,
        })
    }
}
