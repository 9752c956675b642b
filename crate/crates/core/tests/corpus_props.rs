use std::collections::BTreeSet;

use proptest::prelude::*;
use rulewright_core::cnl::CnlGrammar;
use rulewright_core::corpus::{
    generate_synthetic, load_jsonl, sample_limited, split, write_jsonl, GeneratorConfig, Split, SplitSpec,
};
use rulewright_core::decoder::{NgramScorer, Scorer};
use rulewright_core::prompt::{PromptBuilder, PromptConfig, SimilarityIndex, WhitespaceCounter};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_the_corpus(seed in any::<u64>(), n in 1usize..400) {
        let g = CnlGrammar::miniloan();
        let corpus = generate_synthetic(&GeneratorConfig::miniloan(seed, n), &g).unwrap();
        let s = split(&corpus, &SplitSpec::standard(seed)).unwrap();
        let ids = |which: Split| s.split_pairs(which).map(|p| p.id.clone()).collect::<BTreeSet<_>>();
        let (train, test, validation) = (ids(Split::Train), ids(Split::Test), ids(Split::Validation));
        prop_assert_eq!(test.len(), n * 24 / 100);
        prop_assert_eq!(validation.len(), n * 6 / 100);
        prop_assert_eq!(train.len(), n - n * 24 / 100 - n * 6 / 100);
        prop_assert!(train.is_disjoint(&test) && train.is_disjoint(&validation) && test.is_disjoint(&validation));
        let all: BTreeSet<String> = corpus.pairs().iter().map(|p| p.id.clone()).collect();
        let union: BTreeSet<String> = train.union(&test).chain(validation.iter()).cloned().collect();
        prop_assert_eq!(union, all);
    }

    #[test]
    fn save_then_load_is_byte_identical(seed in any::<u64>(), n in 1usize..60) {
        let g = CnlGrammar::miniloan();
        let corpus = split(&generate_synthetic(&GeneratorConfig::miniloan(seed, n), &g).unwrap(), &SplitSpec::standard(seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut first = Vec::new();
        write_jsonl(&corpus, &mut first).unwrap();
        std::fs::write(&path, &first).unwrap();
        let loaded = load_jsonl(&path, Some(&g)).unwrap();
        let mut second = Vec::new();
        write_jsonl(&loaded, &mut second).unwrap();
        prop_assert_eq!(first, second);
        prop_assert_eq!(loaded.pairs(), corpus.pairs());
    }

    #[test]
    fn prompts_fit_and_shrink_from_the_far_end(seed in any::<u64>(), budget in 8usize..600, cut in 1usize..200) {
        let g = CnlGrammar::miniloan();
        let corpus = generate_synthetic(&GeneratorConfig::miniloan(seed, 40), &g).unwrap();
        let index = SimilarityIndex::new(corpus.pairs());
        let query = corpus.pairs()[0].nl.clone();
        let config = PromptConfig { context_budget: budget, reserved_output: 4, ..PromptConfig::default() };
        let Ok(big) = PromptBuilder::new(&index, &config, &WhitespaceCounter).build(&query) else {
            return Ok(());
        };
        prop_assert!(big.token_count <= budget - 4);
        prop_assert_eq!(big.token_count, big.text.split_whitespace().count());
        let smaller = PromptConfig { context_budget: budget.saturating_sub(cut).max(5), ..config.clone() };
        if let Ok(small) = PromptBuilder::new(&index, &smaller, &WhitespaceCounter).build(&query) {
            // small keeps the most similar pairs, which sit at the end
            let k = small.pair_ids.len();
            prop_assert!(k <= big.pair_ids.len());
            prop_assert_eq!(&small.pair_ids[..], &big.pair_ids[big.pair_ids.len() - k..]);
        }
        let again = PromptBuilder::new(&index, &config, &WhitespaceCounter).build(&query).unwrap();
        prop_assert_eq!(again, big);
    }

    #[test]
    fn ngram_distributions_sum_to_one(seed in any::<u64>(), order in 1usize..5, k in 0.01f64..2.0, cut in 0usize..20) {
        let g = CnlGrammar::miniloan();
        let corpus = generate_synthetic(&GeneratorConfig::miniloan(seed, 30), &g).unwrap();
        let statements: Vec<&str> = corpus.pairs().iter().map(|p| p.cnl.as_str()).collect();
        for abstract_literals in [true, false] {
            let scorer = NgramScorer::train(&statements, order, k, abstract_literals).unwrap();
            let prefix: Vec<String> = statements[0].split_whitespace().take(cut).map(String::from).collect();
            let d = scorer.score_next("", &prefix).unwrap();
            prop_assert!((d.total_probability() - 1.0).abs() < 1e-9);
            prop_assert!(d.tokens.values().all(|lp| lp.is_finite() && *lp <= 0.0));
        }
    }
}

#[test]
fn limited_sample_is_exactly_one_hundred() {
    let g = CnlGrammar::miniloan();
    let corpus = split(&generate_synthetic(&GeneratorConfig::miniloan(4, 500), &g).unwrap(), &SplitSpec::standard(4)).unwrap();
    let limited = sample_limited(&corpus, 100, 4).unwrap();
    assert_eq!(limited.train().len(), 100);
    assert_eq!(limited.test(), corpus.test());
    let full: BTreeSet<&str> = corpus.train().iter().map(|p| p.id.as_str()).collect();
    assert!(limited.train().iter().all(|p| full.contains(p.id.as_str())));
}

#[test]
fn paraphrases_share_their_rule() {
    let g = CnlGrammar::miniloan();
    let mut config = GeneratorConfig::miniloan(8, 23);
    config.paraphrases_per_rule = 5;
    let corpus = generate_synthetic(&config, &g).unwrap();
    assert_eq!(corpus.len(), 23);
    for group in corpus.pairs().chunks(5) {
        assert!(group.iter().all(|p| p.cnl == group[0].cnl));
        let nls: BTreeSet<&str> = group.iter().map(|p| p.nl.as_str()).collect();
        assert!(nls.len() > 1);
    }
    assert_ne!(corpus.pairs()[0].cnl, corpus.pairs()[5].cnl);
    config.paraphrases_per_rule = 0;
    assert!(generate_synthetic(&config, &g).is_err());
}
