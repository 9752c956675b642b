//! Offline commands. Each returns the text to print on stdout.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use rulewright_core::cnl::{parse_text, CnlGrammar};
use rulewright_core::corpus::{
    generate_synthetic, load_jsonl, sample_limited, save_jsonl, split, GeneratorConfig, NlCnlPair, Split, SplitSpec,
};
use rulewright_core::decoder::BeamConfig;
use rulewright_core::eval::{
    render_table, run_eval, EvalOptions, MetricReport, PredictionRecord, RemoteTranslator, RetrievalTranslator,
    TableMetric, Translator,
};
use rulewright_core::lm_client::LmClient;
use rulewright_core::pipeline::training_pairs;
use rulewright_core::prompt::SimilarityIndex;
use rulewright_core::rules::{execute, transpile, Record, RuleProgram};
use serde::Serialize;

use crate::config::{Loaded, ServiceConfig};
use crate::service::{translate_nl, TranslateRequest};

fn grammar_from(path: Option<&Path>) -> anyhow::Result<CnlGrammar> {
    match path {
        Some(p) => CnlGrammar::load(p).with_context(|| format!("loading grammar {}", p.display())),
        None => Ok(CnlGrammar::miniloan()),
    }
}

pub struct GenerateArgs {
    pub generator: Option<PathBuf>,
    pub grammar: Option<PathBuf>,
    pub seed: Option<u64>,
    pub count: Option<usize>,
    pub paraphrases: Option<usize>,
    pub out: PathBuf,
}

pub fn generate(args: &GenerateArgs) -> anyhow::Result<String> {
    let grammar = grammar_from(args.grammar.as_deref())?;
    let mut config = match &args.generator {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<GeneratorConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => GeneratorConfig::miniloan(0, 500),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.count {
        config.rule_count = n;
    }
    if let Some(n) = args.paraphrases {
        config.paraphrases_per_rule = n;
    }
    let corpus = generate_synthetic(&config, &grammar)?;
    save_jsonl(&corpus, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(format!("wrote {} pairs to {}", corpus.len(), args.out.display()))
}

pub struct SplitArgs {
    pub input: PathBuf,
    pub grammar: Option<PathBuf>,
    pub seed: u64,
    pub limited: Option<usize>,
    pub out: PathBuf,
}

pub fn split_corpus(args: &SplitArgs) -> anyhow::Result<String> {
    let grammar = match &args.grammar {
        Some(p) => Some(grammar_from(Some(p))?),
        None => None,
    };
    let corpus = load_jsonl(&args.input, grammar.as_ref())?;
    let mut corpus = split(&corpus, &SplitSpec::standard(args.seed))?;
    if let Some(n) = args.limited {
        corpus = sample_limited(&corpus, n, args.seed)?;
    }
    save_jsonl(&corpus, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let c = corpus.counts();
    Ok(format!(
        "train {} test {} validation {} unassigned {}",
        c.train, c.test, c.validation, c.unassigned
    ))
}

pub fn translate(config: ServiceConfig, request: &TranslateRequest) -> anyhow::Result<String> {
    let loaded = Loaded::build(config)?;
    let response = translate_nl(&loaded, request).map_err(|e| anyhow::anyhow!("{}", e.body["error"]))?;
    Ok(serde_json::to_string_pretty(&response)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranslatorKind {
    Decoder,
    Retrieval,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modes {
    Both,
    Constrained,
    Unconstrained,
}

pub struct EvalArgs {
    pub translator: TranslatorKind,
    pub modes: Modes,
    pub split: Split,
    pub dataset: String,
    pub metric: TableMetric,
    pub threads: usize,
    pub strict: bool,
    pub records: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalDocument<'a> {
    dataset: &'a str,
    reports: Vec<&'a MetricReport>,
    records: Vec<&'a [PredictionRecord]>,
}

pub fn eval(config: ServiceConfig, args: &EvalArgs) -> anyhow::Result<String> {
    let loaded = Loaded::build(config)?;
    let (Some(corpus), Some(pipeline)) = (&loaded.corpus, &loaded.pipeline) else {
        bail!("eval needs a corpus in the config");
    };
    let pairs: Vec<NlCnlPair> = corpus.split_pairs(args.split).cloned().collect();
    if pairs.is_empty() {
        bail!("the {:?} split is empty; set split_seed or split the corpus first", args.split);
    }
    let grammar = corpus.grammar_bound.then(|| loaded.grammar.clone());
    let train = training_pairs(corpus);
    let mut translators: Vec<Box<dyn Translator>> = Vec::new();
    match args.translator {
        TranslatorKind::Decoder => {
            let modes: &[bool] = match args.modes {
                Modes::Both => &[false, true],
                Modes::Constrained => &[true],
                Modes::Unconstrained => &[false],
            };
            for &constrained in modes {
                let beam = BeamConfig {
                    constrained,
                    ..pipeline.config.beam.clone()
                };
                translators.push(Box::new(pipeline.translator_with(beam)));
            }
        }
        TranslatorKind::Retrieval => translators.push(Box::new(RetrievalTranslator {
            index: SimilarityIndex::new(&train),
            grammar: grammar.clone(),
        })),
        TranslatorKind::Remote => {
            let endpoint = loaded.config.scorer.endpoint.clone().unwrap_or_default();
            translators.push(Box::new(RemoteTranslator {
                client: Arc::new(LmClient::new(endpoint)?),
                index: SimilarityIndex::new(&train),
                prompt: loaded.config.scorer.prompt.clone(),
                grammar: grammar.clone(),
            }))
        }
    }
    let options = EvalOptions {
        threads: args.threads,
        strict: args.strict,
    };
    let mut outcomes = Vec::new();
    for t in &translators {
        outcomes.push(run_eval(&pairs, t.as_ref(), grammar.as_deref(), &options)?);
    }
    let entries: Vec<(String, MetricReport)> =
        outcomes.iter().map(|o| (args.dataset.clone(), o.report.clone())).collect();
    let table = render_table(&entries, args.metric);
    if let Some(path) = &args.records {
        let doc = EvalDocument {
            dataset: &args.dataset,
            reports: outcomes.iter().map(|o| &o.report).collect(),
            records: outcomes.iter().map(|o| o.records.as_slice()).collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&doc)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, &table.csv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(table.text)
}

pub fn transpile_cnl(grammar: Option<&Path>, name: &str, cnl: &str) -> anyhow::Result<String> {
    let grammar = grammar_from(grammar)?;
    let ast = parse_text(cnl, &grammar)?;
    Ok(transpile(&ast, &grammar, name)?.to_json())
}

/// `records` holds one JSON object or an array of them.
pub fn run_program(program: &Path, records: &Path) -> anyhow::Result<String> {
    let text = std::fs::read_to_string(program).with_context(|| format!("reading {}", program.display()))?;
    let program = RuleProgram::from_json(&text).with_context(|| format!("parsing {}", program.display()))?;
    let text = std::fs::read_to_string(records).with_context(|| format!("reading {}", records.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let list: Vec<Record> = match value {
        serde_json::Value::Array(items) => items
            .into_iter()
            .map(serde_json::from_value)
            .collect::<Result<_, _>>()?,
        other => vec![serde_json::from_value(other)?],
    };
    let mut out = Vec::new();
    for record in &list {
        let line = match execute(&program, record) {
            Ok(trace) => serde_json::to_string(&trace)?,
            Err(e) => serde_json::json!({ "error": e.to_string() }).to_string(),
        };
        out.push(line);
    }
    Ok(out.join("\n"))
}
