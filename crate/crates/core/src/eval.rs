//! Accuracy, BLEU and ROUGE-L over predicted CNL, plus evaluation runs and
//! report tables.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnl::{parse_text, semantic_equal, CnlGrammar};
use crate::corpus::NlCnlPair;
use crate::decoder::{beam_decode, BeamConfig, Scorer, TrieScope};
use crate::lm_client::{prompt_for, LmClient};
use crate::prompt::{PromptConfig, SimilarityIndex};
use crate::trie::TokenTrie;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("{predictions} predictions for {references} references")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("no predictions to score")]
    EmptyInput,
}

fn check<S: AsRef<str>, T: AsRef<str>>(predictions: &[S], references: &[T]) -> Result<(), MetricError> {
    if predictions.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            references: references.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Fraction of positions where the whitespace-normalized strings are equal.
pub fn exact_match_accuracy<S: AsRef<str>, T: AsRef<str>>(predictions: &[S], references: &[T]) -> Result<f64, MetricError> {
    check(predictions, references)?;
    let hits = predictions
        .iter()
        .zip(references)
        .filter(|(p, r)| words(p.as_ref()) == words(r.as_ref()))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Raw string equality, no whitespace normalization.
pub fn exact_match_accuracy_strict<S: AsRef<str>, T: AsRef<str>>(
    predictions: &[S],
    references: &[T],
) -> Result<f64, MetricError> {
    check(predictions, references)?;
    let hits = predictions
        .iter()
        .zip(references)
        .filter(|(p, r)| p.as_ref() == r.as_ref())
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Fraction where both sides parse and are equal up to operand order.
pub fn semantic_accuracy<S: AsRef<str>, T: AsRef<str>>(
    predictions: &[S],
    references: &[T],
    grammar: &CnlGrammar,
) -> Result<f64, MetricError> {
    check(predictions, references)?;
    let hits = predictions
        .iter()
        .zip(references)
        .filter(|(p, r)| {
            // exact matches count even when the reference itself does not parse
            words(p.as_ref()) == words(r.as_ref())
                || matches!(
                    (parse_text(p.as_ref(), grammar), parse_text(r.as_ref(), grammar)),
                    (Ok(a), Ok(b)) if semantic_equal(&a, &b)
                )
        })
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU over orders 1 to 4 with one reference per prediction.
///
/// An order with no matches uses `1 / (total + 1)` as its precision.
/// Brevity penalty `exp(1 - r / c)` applies when `c < r`.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(predictions: &[S], references: &[T]) -> Result<f64, MetricError> {
    check(predictions, references)?;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (p, q) in predictions.iter().zip(references) {
        let p = words(p.as_ref());
        let q = words(q.as_ref());
        c += p.len();
        r += q.len();
        for n in 1..=4 {
            let pc = ngram_counts(&p, n);
            let qc = ngram_counts(&q, n);
            matches[n - 1] += pc.iter().map(|(g, k)| (*k).min(qc.get(g).copied().unwrap_or(0))).sum::<usize>();
            totals[n - 1] += p.len().saturating_sub(n - 1);
        }
    }
    let log_mean = (0..4)
        .map(|i| {
            let p = if matches[i] == 0 {
                1.0 / (totals[i] as f64 + 1.0)
            } else {
                matches[i] as f64 / totals[i] as f64
            };
            p.ln()
        })
        .sum::<f64>()
        / 4.0;
    let bp = if c >= r {
        1.0
    } else if c == 0 {
        0.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(bp * log_mean.exp())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Mean LCS F1 over pairs; a pair with an empty side scores 0.
pub fn rouge_l<S: AsRef<str>, T: AsRef<str>>(predictions: &[S], references: &[T]) -> Result<f64, MetricError> {
    check(predictions, references)?;
    let total: f64 = predictions
        .iter()
        .zip(references)
        .map(|(p, r)| {
            let p = words(p.as_ref());
            let r = words(r.as_ref());
            let l = lcs_len(&p, &r);
            if l == 0 {
                return 0.0;
            }
            let precision = l as f64 / p.len() as f64;
            let recall = l as f64 / r.len() as f64;
            2.0 * precision * recall / (precision + recall)
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub cnl: String,
    pub valid: bool,
}

pub trait Translator: Send + Sync {
    fn translate(&self, nl: &str) -> Result<Translation, String>;

    /// Row label without the constrained suffix.
    fn label(&self) -> String;

    fn constrained(&self) -> bool {
        false
    }

    fn trie_scope(&self) -> Option<TrieScope> {
        None
    }
}

/// Beam search with any scorer; the best finished hypothesis, else the best partial.
pub struct DecoderTranslator {
    pub name: String,
    pub scorer: Arc<dyn Scorer>,
    pub trie: Option<Arc<TokenTrie>>,
    pub grammar: Option<Arc<CnlGrammar>>,
    pub config: BeamConfig,
}

impl Translator for DecoderTranslator {
    fn translate(&self, nl: &str) -> Result<Translation, String> {
        let result = beam_decode(
            nl,
            self.scorer.as_ref(),
            self.trie.as_deref(),
            self.grammar.as_deref(),
            &self.config,
        )
        .map_err(|e| e.to_string())?;
        Ok(match result.best_any() {
            Some(h) => Translation {
                cnl: h.text.clone(),
                valid: h.valid,
            },
            None => Translation {
                cnl: String::new(),
                valid: false,
            },
        })
    }

    fn label(&self) -> String {
        self.name.clone()
    }

    fn constrained(&self) -> bool {
        self.config.constrained
    }

    fn trie_scope(&self) -> Option<TrieScope> {
        self.config.constrained.then_some(self.config.trie_scope)
    }
}

/// Returns the CNL of the most similar training pair.
pub struct RetrievalTranslator {
    pub index: SimilarityIndex,
    pub grammar: Option<Arc<CnlGrammar>>,
}

impl Translator for RetrievalTranslator {
    fn translate(&self, nl: &str) -> Result<Translation, String> {
        let top = self.index.top_k(nl, 1);
        let cnl = top
            .first()
            .map(|r| self.index.pairs()[r.index].cnl.clone())
            .ok_or("empty retrieval index")?;
        let valid = self.grammar.as_ref().is_none_or(|g| parse_text(&cnl, g).is_ok());
        Ok(Translation { cnl, valid })
    }

    fn label(&self) -> String {
        "retrieval".into()
    }
}

/// Whole-sequence completion from a hosted model.
pub struct RemoteTranslator {
    pub client: Arc<LmClient>,
    pub index: SimilarityIndex,
    pub prompt: PromptConfig,
    pub grammar: Option<Arc<CnlGrammar>>,
}

impl Translator for RemoteTranslator {
    fn translate(&self, nl: &str) -> Result<Translation, String> {
        let prompt = prompt_for(&self.index, &self.prompt, nl).map_err(|e| e.to_string())?;
        let cnl = self.client.remote_translate(&prompt.text).map_err(|e| e.to_string())?;
        let valid = !cnl.is_empty() && self.grammar.as_ref().is_none_or(|g| parse_text(&cnl, g).is_ok());
        Ok(Translation { cnl, valid })
    }

    fn label(&self) -> String {
        "remote".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub predicted: String,
    pub reference: String,
    pub seconds: f64,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub configuration: String,
    pub constrained: bool,
    pub trie_scope: Option<TrieScope>,
    pub accuracy: f64,
    /// Absent for corpora that are not grammar-bound.
    pub semantic_accuracy: Option<f64>,
    pub bleu: f64,
    pub rouge_l: f64,
    pub mean_inference_seconds: f64,
    pub n: usize,
    pub valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub report: MetricReport,
    pub records: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub threads: usize,
    /// Raw string equality for accuracy instead of whitespace-normalized.
    pub strict: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { threads: 1, strict: false }
    }
}

fn predict(pair: &NlCnlPair, translator: &dyn Translator) -> PredictionRecord {
    let start = Instant::now();
    let out = translator.translate(&pair.nl);
    let seconds = start.elapsed().as_secs_f64();
    let (predicted, valid, error) = match out {
        Ok(t) => (t.cnl, t.valid, None),
        Err(e) => (String::new(), false, Some(e)),
    };
    PredictionRecord {
        id: pair.id.clone(),
        predicted,
        reference: pair.cnl.clone(),
        seconds,
        valid,
        error,
    }
}

/// Translates every pair, timing only the translator call. Translator
/// failures become invalid empty predictions. Records come back sorted by id.
pub fn run_eval(
    pairs: &[NlCnlPair],
    translator: &dyn Translator,
    grammar: Option<&CnlGrammar>,
    options: &EvalOptions,
) -> Result<EvalOutcome, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let threads = options.threads.max(1).min(pairs.len());
    let mut records: Vec<PredictionRecord> = if threads == 1 {
        pairs.iter().map(|p| predict(p, translator)).collect()
    } else {
        let chunk = pairs.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = pairs
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(|p| predict(p, translator)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("translator thread panicked"))
                .collect()
        })
    };
    records.sort_by(|a, b| a.id.cmp(&b.id));

    let predicted: Vec<&str> = records.iter().map(|r| r.predicted.as_str()).collect();
    let reference: Vec<&str> = records.iter().map(|r| r.reference.as_str()).collect();
    let accuracy = if options.strict {
        exact_match_accuracy_strict(&predicted, &reference)?
    } else {
        exact_match_accuracy(&predicted, &reference)?
    };
    let report = MetricReport {
        configuration: translator.label(),
        constrained: translator.constrained(),
        trie_scope: translator.trie_scope(),
        accuracy,
        semantic_accuracy: grammar.map(|g| semantic_accuracy(&predicted, &reference, g)).transpose()?,
        bleu: bleu(&predicted, &reference)?,
        rouge_l: rouge_l(&predicted, &reference)?,
        mean_inference_seconds: records.iter().map(|r| r.seconds).sum::<f64>() / records.len() as f64,
        n: records.len(),
        valid: records.iter().filter(|r| r.valid).count(),
    };
    Ok(EvalOutcome { report, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableMetric {
    #[default]
    Accuracy,
    SemanticAccuracy,
    Bleu,
    RougeL,
}

impl TableMetric {
    fn pick(self, r: &MetricReport) -> Option<f64> {
        match self {
            TableMetric::Accuracy => Some(r.accuracy),
            TableMetric::SemanticAccuracy => r.semantic_accuracy,
            TableMetric::Bleu => Some(r.bleu),
            TableMetric::RougeL => Some(r.rouge_l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedTable {
    pub text: String,
    pub csv: String,
}

pub fn row_label(report: &MetricReport) -> String {
    if report.constrained {
        format!("{}/C.", report.configuration)
    } else {
        report.configuration.clone()
    }
}

/// One row per configuration, one column per dataset after `INF` (mean
/// inference seconds over the row). Rows and columns keep first-seen order.
/// Missing cells print as `-`.
pub fn render_table(entries: &[(String, MetricReport)], metric: TableMetric) -> RenderedTable {
    let mut rows: Vec<String> = Vec::new();
    let mut columns: Vec<String> = Vec::new();
    let mut cells: HashMap<(String, String), String> = HashMap::new();
    let mut inf: HashMap<String, Vec<f64>> = HashMap::new();
    for (dataset, report) in entries {
        let row = row_label(report);
        if !rows.contains(&row) {
            rows.push(row.clone());
        }
        if !columns.contains(dataset) {
            columns.push(dataset.clone());
        }
        let value = metric.pick(report).map_or("-".to_string(), |v| format!("{v:.2}"));
        cells.insert((row.clone(), dataset.clone()), value);
        inf.entry(row).or_default().push(report.mean_inference_seconds);
    }

    let header: Vec<String> = ["Model".to_string(), "INF".to_string()]
        .into_iter()
        .chain(columns.iter().cloned())
        .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let times = &inf[row];
            let mean = times.iter().sum::<f64>() / times.len() as f64;
            [row.clone(), format!("{mean:.2}")]
                .into_iter()
                .chain(
                    columns
                        .iter()
                        .map(|c| cells.get(&(row.clone(), c.clone())).cloned().unwrap_or("-".into())),
                )
                .collect()
        })
        .collect();

    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            std::iter::once(&header)
                .chain(&body)
                .map(|r| r[i].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut text = String::new();
    for line in std::iter::once(&header).chain(&body) {
        let cells: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect();
        text.push_str(cells.join("  ").trim_end());
        text.push('\n');
    }

    let mut csv = String::new();
    for line in std::iter::once(&header).chain(&body) {
        let escaped: Vec<String> = line
            .iter()
            .map(|c| {
                if c.contains([',', '"', '\n']) {
                    format!("\"{}\"", c.replace('"', "\"\""))
                } else {
                    c.clone()
                }
            })
            .collect();
        csv.push_str(&escaped.join(","));
        csv.push('\n');
    }
    RenderedTable { text, csv }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match_accuracy(&["a b"], &["a b"]).unwrap(), 1.0);
        assert_eq!(exact_match_accuracy(&["a", "b"], &["a", "c"]).unwrap(), 0.5);
        assert_eq!(exact_match_accuracy(&["a  b"], &["a b"]).unwrap(), 1.0);
        assert_eq!(exact_match_accuracy_strict(&["a  b"], &["a b"]).unwrap(), 0.0);
        assert_eq!(
            exact_match_accuracy(&["a"], &["a", "b"]),
            Err(MetricError::LengthMismatch {
                predictions: 1,
                references: 2
            })
        );
        assert_eq!(exact_match_accuracy::<&str, &str>(&[], &[]), Err(MetricError::EmptyInput));
    }

    #[test]
    fn semantic_examples() {
        let g = CnlGrammar::miniloan();
        let p = ["if loan amount is at most 5 and customer age is at least 18 then approve the loan"];
        let r = ["if customer age is at least 18 and loan amount is at most 5 then approve the loan"];
        assert_eq!(semantic_accuracy(&p, &r, &g).unwrap(), 1.0);
        assert_eq!(exact_match_accuracy(&p, &r).unwrap(), 0.0);
        assert_eq!(semantic_accuracy(&["if then"], &r, &g).unwrap(), 0.0);
    }

    #[test]
    fn bleu_identity_and_floor() {
        assert!((bleu(&["a b c d e"], &["a b c d e"]).unwrap() - 1.0).abs() < 1e-12);
        let floor = (1.0f64 / 4.0 * 1.0 / 3.0 * 1.0 / 2.0 * 1.0).powf(0.25);
        assert!((bleu(&["x y z"], &["a b c"]).unwrap() - floor).abs() < 1e-12);
    }

    #[test]
    fn bleu_hand_counted() {
        // matches 3/4, 2/3, 1/2; order 4 has none of 1: smoothed to 1/2
        let want = (0.75f64 * (2.0 / 3.0) * 0.5 * 0.5).powf(0.25);
        assert!((bleu(&["a b c d"], &["a b c e"]).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity() {
        // c = 2, r = 4, every order either matches fully or has no n-grams
        let p1 = 1.0;
        let p2 = 1.0;
        let p3 = 1.0 / 1.0;
        let p4 = 1.0 / 1.0;
        let want = (1.0f64 - 4.0 / 2.0).exp() * (p1 * p2 * p3 * p4);
        assert!((bleu(&["a b"], &["a b c d"]).unwrap() - want).abs() < 1e-12);
        assert_eq!(bleu(&[""], &["a"]).unwrap(), 0.0);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&["a b c"], &["a b c"]).unwrap(), 1.0);
        assert_eq!(rouge_l(&["a b"], &["c d"]).unwrap(), 0.0);
        assert!((rouge_l(&["a b c d"], &["a c b d"]).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l(&[""], &["a"]).unwrap(), 0.0);
        assert_eq!(lcs_len(&[1, 2, 3, 4], &[1, 3, 2, 4]), 3);
    }

    struct Fixed(fn(&str) -> Result<Translation, String>);

    impl Translator for Fixed {
        fn translate(&self, nl: &str) -> Result<Translation, String> {
            (self.0)(nl)
        }
        fn label(&self) -> String {
            "fixed".into()
        }
    }

    fn pairs() -> Vec<NlCnlPair> {
        ["b", "a", "c"]
            .iter()
            .map(|id| NlCnlPair {
                id: id.to_string(),
                nl: format!("nl {id}"),
                cnl: format!("cnl {id}"),
                split: crate::corpus::Split::Test,
            })
            .collect()
    }

    #[test]
    fn perfect_and_empty_translators() {
        let perfect = Fixed(|nl| {
            Ok(Translation {
                cnl: nl.replace("nl", "cnl"),
                valid: true,
            })
        });
        let out = run_eval(&pairs(), &perfect, None, &EvalOptions::default()).unwrap();
        assert_eq!(out.report.accuracy, 1.0);
        assert_eq!(out.report.bleu, 1.0);
        assert_eq!(out.report.rouge_l, 1.0);
        let ids: Vec<&str> = out.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);

        let empty = Fixed(|_| {
            Ok(Translation {
                cnl: String::new(),
                valid: false,
            })
        });
        assert_eq!(run_eval(&pairs(), &empty, None, &EvalOptions::default()).unwrap().report.accuracy, 0.0);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let failing = Fixed(|nl| if nl == "nl a" { Err("boom".into()) } else { Ok(Translation { cnl: nl.replace("nl", "cnl"), valid: true }) });
        let out = run_eval(&pairs(), &failing, None, &EvalOptions { threads: 2, strict: false }).unwrap();
        assert_eq!(out.records[0].error.as_deref(), Some("boom"));
        assert!(!out.records[0].valid);
        assert!((out.report.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(out.report.valid, 2);
    }

    #[test]
    fn retrieval_memorizes_duplicates() {
        let train = pairs();
        let t = RetrievalTranslator {
            index: SimilarityIndex::new(&train),
            grammar: None,
        };
        let out = run_eval(&train, &t, None, &EvalOptions::default()).unwrap();
        assert_eq!(out.report.accuracy, 1.0);
    }

    fn report(config: &str, constrained: bool, accuracy: f64) -> MetricReport {
        MetricReport {
            configuration: config.into(),
            constrained,
            trie_scope: None,
            accuracy,
            semantic_accuracy: None,
            bleu: 0.5,
            rouge_l: 0.5,
            mean_inference_seconds: 0.25,
            n: 1,
            valid: 1,
        }
    }

    #[test]
    fn table_single_cell() {
        let t = render_table(&[("miniloan".into(), report("ngram", false, 0.98))], TableMetric::Accuracy);
        assert_eq!(t.text, "Model   INF  miniloan\nngram  0.25      0.98\n");
        assert_eq!(t.csv, "Model,INF,miniloan\nngram,0.25,0.98\n");
    }

    #[test]
    fn table_constrained_suffix_and_missing_cells() {
        let t = render_table(
            &[
                ("a".into(), report("ngram", true, 0.5)),
                ("b".into(), report("mix", false, 1.0)),
            ],
            TableMetric::Accuracy,
        );
        assert!(t.text.contains("ngram/C."));
        assert_eq!(t.csv, "Model,INF,a,b\nngram/C.,0.25,0.50,-\nmix,0.25,-,1.00\n");
        assert_eq!(
            render_table(&[("a".into(), report("x", false, 1.0))], TableMetric::SemanticAccuracy).csv,
            "Model,INF,a\nx,0.25,-\n"
        );
    }
}
