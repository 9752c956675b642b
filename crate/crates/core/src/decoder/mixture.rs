use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use super::{NextTokenDistribution, ScoreError, Scorer};
use crate::cnl::{abstract_token, tokenize_strings};
use crate::corpus::NlCnlPair;
use crate::prompt::SimilarityIndex;
use crate::trie::TrieError;

/// `lambda * P_ngram + (1 - lambda) * P_retrieval`, where the retrieval part
/// counts how the top-k most similar training CNLs continue the prefix.
/// When none of them match the prefix the retrieval part is uniform over
/// every token seen in the indexed CNLs plus end of sequence.
pub struct MixtureScorer {
    index: SimilarityIndex,
    cnl: Vec<Vec<String>>,
    vocabulary: BTreeSet<String>,
    k: usize,
    lambda: f64,
    abstract_literals: bool,
    ngram: Arc<dyn Scorer>,
    last_query: Mutex<Option<(String, Vec<usize>)>>,
}

impl std::fmt::Debug for MixtureScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MixtureScorer")
            .field("pairs", &self.cnl.len())
            .field("k", &self.k)
            .field("lambda", &self.lambda)
            .finish()
    }
}

impl MixtureScorer {
    pub const DEFAULT_K: usize = 5;
    pub const DEFAULT_LAMBDA: f64 = 0.5;

    pub fn new(
        pairs: &[NlCnlPair],
        k: usize,
        lambda: f64,
        ngram: Arc<dyn Scorer>,
        abstract_literals: bool,
    ) -> Result<Self, TrieError> {
        assert!((0.0..=1.0).contains(&lambda), "lambda must be in [0, 1]");
        if pairs.is_empty() {
            return Err(TrieError::EmptyCorpus);
        }
        let view = |t: &String| {
            if abstract_literals {
                abstract_token(t).to_string()
            } else {
                t.clone()
            }
        };
        let mut cnl = Vec::with_capacity(pairs.len());
        let mut vocabulary = BTreeSet::new();
        for (index, p) in pairs.iter().enumerate() {
            let tokens = tokenize_strings(&p.cnl).map_err(|source| TrieError::Tokenize { index, source })?;
            let tokens: Vec<String> = tokens.iter().map(view).collect();
            vocabulary.extend(tokens.iter().cloned());
            cnl.push(tokens);
        }
        Ok(MixtureScorer {
            index: SimilarityIndex::new(pairs),
            cnl,
            vocabulary,
            k: k.max(1),
            lambda,
            abstract_literals,
            ngram,
            last_query: Mutex::new(None),
        })
    }

    fn retrieved(&self, source: &str) -> Vec<usize> {
        let mut cache = self.last_query.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((q, hits)) = cache.as_ref() {
            if q == source {
                return hits.clone();
            }
        }
        let hits: Vec<usize> = self.index.top_k(source, self.k).into_iter().map(|r| r.index).collect();
        *cache = Some((source.to_string(), hits.clone()));
        hits
    }

    /// Retrieval distribution as plain probabilities; `None` key is end of sequence.
    pub fn retrieval_probabilities(&self, source: &str, prefix: &[String]) -> BTreeMap<Option<String>, f64> {
        let prefix: Vec<String> = prefix
            .iter()
            .map(|t| {
                if self.abstract_literals {
                    abstract_token(t).to_string()
                } else {
                    t.clone()
                }
            })
            .collect();
        let mut counts: BTreeMap<Option<String>, f64> = BTreeMap::new();
        for i in self.retrieved(source) {
            let seq = &self.cnl[i];
            if seq.len() >= prefix.len() && seq[..prefix.len()] == prefix[..] {
                *counts.entry(seq.get(prefix.len()).cloned()).or_insert(0.0) += 1.0;
            }
        }
        let total: f64 = counts.values().sum();
        if total > 0.0 {
            counts.values_mut().for_each(|c| *c /= total);
            counts
        } else {
            let u = 1.0 / (self.vocabulary.len() + 1) as f64;
            self.vocabulary
                .iter()
                .map(|t| (Some(t.clone()), u))
                .chain([(None, u)])
                .collect()
        }
    }
}

impl Scorer for MixtureScorer {
    fn score_next(&self, source: &str, prefix: &[String]) -> Result<NextTokenDistribution, ScoreError> {
        let base = self.ngram.score_next(source, prefix)?;
        let retrieval = self.retrieval_probabilities(source, prefix);
        let mut mixed: BTreeMap<Option<String>, f64> = BTreeMap::new();
        for (t, lp) in base.tokens {
            *mixed.entry(Some(t)).or_insert(0.0) += self.lambda * lp.exp();
        }
        *mixed.entry(None).or_insert(0.0) += self.lambda * base.eos.exp();
        for (t, p) in retrieval {
            *mixed.entry(t).or_insert(0.0) += (1.0 - self.lambda) * p;
        }
        let mut out = NextTokenDistribution {
            tokens: BTreeMap::new(),
            eos: f64::NEG_INFINITY,
        };
        for (t, p) in mixed {
            if p <= 0.0 {
                continue;
            }
            match t {
                Some(t) => {
                    out.tokens.insert(t, p.ln());
                }
                None => out.eos = p.ln(),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::decoder::NgramScorer;

    fn pair(id: &str, nl: &str, cnl: &str) -> NlCnlPair {
        NlCnlPair {
            id: id.into(),
            nl: nl.into(),
            cnl: cnl.into(),
            split: Split::Train,
        }
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn corpus() -> Vec<NlCnlPair> {
        vec![pair("0", "alpha beta", "a b c"), pair("1", "gamma delta", "a b d"), pair("2", "alpha", "e")]
    }

    #[test]
    fn lambda_one_is_the_ngram() {
        let pairs = corpus();
        let statements: Vec<&str> = pairs.iter().map(|p| p.cnl.as_str()).collect();
        let ngram = Arc::new(NgramScorer::with_defaults(&statements).unwrap());
        let m = MixtureScorer::new(&pairs, 1, 1.0, ngram.clone(), false).unwrap();
        for prefix in [s(&[]), s(&["a"]), s(&["a", "b"]), s(&["e"])] {
            assert_eq!(
                m.score_next("alpha beta", &prefix).unwrap(),
                ngram.score_next("alpha beta", &prefix).unwrap()
            );
        }
    }

    #[test]
    fn lambda_zero_copies_top_match() {
        let pairs = corpus();
        let statements: Vec<&str> = pairs.iter().map(|p| p.cnl.as_str()).collect();
        let ngram = Arc::new(NgramScorer::with_defaults(&statements).unwrap());
        let m = MixtureScorer::new(&pairs, 1, 0.0, ngram, false).unwrap();
        let d = m.score_next("gamma delta", &s(&["a", "b"])).unwrap();
        assert_eq!(d.tokens.len(), 1);
        assert_eq!(d.tokens["d"], 0.0);
        assert_eq!(d.eos, f64::NEG_INFINITY);
    }

    #[test]
    fn unmatched_prefix_is_uniform() {
        let pairs = corpus();
        let ngram = Arc::new(NgramScorer::with_defaults(&["a"]).unwrap());
        let m = MixtureScorer::new(&pairs, 2, 0.0, ngram, false).unwrap();
        let d = m.score_next("alpha", &s(&["z"])).unwrap();
        // {a, b, c, d, e} plus end of sequence
        for lp in d.tokens.values() {
            assert!((lp.exp() - 1.0 / 6.0).abs() < 1e-12);
        }
        assert!((d.total_probability() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_sums_to_one() {
        let pairs = corpus();
        let statements: Vec<&str> = pairs.iter().map(|p| p.cnl.as_str()).collect();
        let ngram = Arc::new(NgramScorer::with_defaults(&statements).unwrap());
        let m = MixtureScorer::new(&pairs, 2, 0.3, ngram, false).unwrap();
        for prefix in [s(&[]), s(&["a"]), s(&["a", "b"]), s(&["q"])] {
            let total = m.score_next("alpha", &prefix).unwrap().total_probability();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
