use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use rulewright_cli::commands::{self, EvalArgs, GenerateArgs, Modes, SplitArgs, TranslatorKind};
use rulewright_cli::config::{Loaded, ServiceConfig};
use rulewright_cli::service::{self, TranslateRequest};
use rulewright_core::corpus::Split;
use rulewright_core::eval::TableMetric;

#[derive(Parser)]
#[command(name = "rulewright", version, about = "Translate natural-language business rules into a controlled language")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TranslatorArg {
    Decoder,
    Retrieval,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModesArg {
    Both,
    Constrained,
    Unconstrained,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Validation,
    Train,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Accuracy,
    Semantic,
    Bleu,
    RougeL,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Write a synthetic corpus as JSONL.
    Generate {
        #[arg(long)]
        generator: Option<PathBuf>,
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        paraphrases: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign train/test/validation splits to a JSONL corpus.
    Split {
        #[arg(long)]
        input: PathBuf,
        /// Check every cnl against this grammar.
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep only this many train pairs.
        #[arg(long)]
        limited: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode one sentence with the configured pipeline.
    Translate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        beam_width: Option<usize>,
        #[arg(long)]
        unconstrained: bool,
        #[arg(long)]
        candidates: Option<usize>,
        nl: String,
    },
    /// Score a translator on one split of the configured corpus.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "decoder")]
        translator: TranslatorArg,
        #[arg(long, value_enum, default_value = "both")]
        modes: ModesArg,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value = "corpus")]
        dataset: String,
        #[arg(long, value_enum, default_value = "accuracy")]
        metric: MetricArg,
        #[arg(long)]
        threads: Option<usize>,
        /// Compare predictions byte for byte.
        #[arg(long)]
        strict: bool,
        /// Write reports and per-pair records as JSON.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the rule program for a CNL statement.
    Transpile {
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(long, default_value = "rule")]
        name: String,
        cnl: String,
    },
    /// Execute a rule program against records, one trace per line.
    Run {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        records: PathBuf,
    },
}

fn load(config: Option<&PathBuf>) -> anyhow::Result<ServiceConfig> {
    match config {
        Some(p) => ServiceConfig::load(p),
        None => Ok(ServiceConfig::default()),
    }
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let output = match Cli::parse().command {
        Command::Serve { config, port } => {
            let loaded = Arc::new(Loaded::build(load(config.as_ref())?)?);
            tokio::runtime::Runtime::new()?.block_on(service::serve(loaded, port))?;
            return Ok(());
        }
        Command::Generate {
            generator,
            grammar,
            seed,
            count,
            paraphrases,
            out,
        } => commands::generate(&GenerateArgs {
            generator,
            grammar,
            seed,
            count,
            paraphrases,
            out,
        })?,
        Command::Split {
            input,
            grammar,
            seed,
            limited,
            out,
        } => commands::split_corpus(&SplitArgs {
            input,
            grammar,
            seed,
            limited,
            out,
        })?,
        Command::Translate {
            config,
            beam_width,
            unconstrained,
            candidates,
            nl,
        } => commands::translate(
            load(Some(&config))?,
            &TranslateRequest {
                nl,
                beam_width,
                constrained: unconstrained.then_some(false),
                max_candidates: candidates,
                scorer: None,
            },
        )?,
        Command::Eval {
            config,
            translator,
            modes,
            split,
            dataset,
            metric,
            threads,
            strict,
            records,
            csv,
        } => commands::eval(
            load(Some(&config))?,
            &EvalArgs {
                translator: match translator {
                    TranslatorArg::Decoder => TranslatorKind::Decoder,
                    TranslatorArg::Retrieval => TranslatorKind::Retrieval,
                    TranslatorArg::Remote => TranslatorKind::Remote,
                },
                modes: match modes {
                    ModesArg::Both => Modes::Both,
                    ModesArg::Constrained => Modes::Constrained,
                    ModesArg::Unconstrained => Modes::Unconstrained,
                },
                split: match split {
                    SplitArg::Test => Split::Test,
                    SplitArg::Validation => Split::Validation,
                    SplitArg::Train => Split::Train,
                },
                dataset,
                metric: match metric {
                    MetricArg::Accuracy => TableMetric::Accuracy,
                    MetricArg::Semantic => TableMetric::SemanticAccuracy,
                    MetricArg::Bleu => TableMetric::Bleu,
                    MetricArg::RougeL => TableMetric::RougeL,
                },
                threads: threads
                    .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
                strict,
                records,
                csv,
            },
        )?,
        Command::Transpile { grammar, name, cnl } => commands::transpile_cnl(grammar.as_deref(), &name, &cnl)?,
        Command::Run { program, records } => commands::run_program(&program, &records)?,
    };
    // a closed pipe (e.g. `| head`) is not an error
    let _ = writeln!(std::io::stdout().lock(), "{output}");
    Ok(())
}
