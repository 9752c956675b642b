//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use rulewright_core::cnl::CnlGrammar;
use rulewright_core::corpus::{generate_synthetic, split, GeneratorConfig, PairCorpus, SplitSpec};
use rulewright_core::pipeline::{Pipeline, PipelineConfig, ScorerKind, ScorerSpec};
use rulewright_core::trie::MarkerPolicy;

/// Split synthetic loan corpus of `n` pairs.
pub fn corpus(seed: u64, n: usize) -> PairCorpus {
    let g = CnlGrammar::miniloan();
    let c = generate_synthetic(&GeneratorConfig::miniloan(seed, n), &g).expect("bundled generator");
    split(&c, &SplitSpec::standard(seed)).expect("non-empty corpus")
}

pub fn pipeline(corpus: &PairCorpus, kind: ScorerKind) -> Pipeline {
    let config = PipelineConfig {
        scorer: ScorerSpec::of(kind),
        marker_policy: MarkerPolicy::None,
        ..PipelineConfig::default()
    };
    Pipeline::build(corpus, Some(Arc::new(CnlGrammar::miniloan())), config).expect("pipeline builds")
}
