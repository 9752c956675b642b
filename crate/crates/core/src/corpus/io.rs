use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, NlCnlPair, PairCorpus, Split};
use crate::cnl::{parse_text, CnlGrammar};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonlRecord {
    id: Option<String>,
    nl: String,
    cnl: String,
    #[serde(default)]
    split: Split,
}

#[derive(Serialize)]
struct JsonlOut<'a> {
    id: &'a str,
    nl: &'a str,
    cnl: &'a str,
    #[serde(skip_serializing_if = "is_unassigned")]
    split: Split,
}

fn is_unassigned(split: &Split) -> bool {
    *split == Split::Unassigned
}

fn line_id(index: usize) -> String {
    format!("{index:06}")
}

/// Reads `{"id"?, "nl", "cnl", "split"?}` objects, one per line.
///
/// With a grammar the corpus is grammar-bound and every cnl must parse.
/// Missing ids default to the zero-based line index, zero-padded to six digits.
/// Line numbers in errors are one-based.
pub fn load_jsonl(path: impl AsRef<Path>, grammar: Option<&CnlGrammar>) -> Result<PairCorpus, CorpusError> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut pairs = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Schema {
            line: index + 1,
            message: e.to_string(),
        })?;
        if let Some(grammar) = grammar {
            parse_text(&record.cnl, grammar).map_err(|error| CorpusError::CnlParse {
                line: index + 1,
                error,
            })?;
        }
        pairs.push(NlCnlPair {
            id: record.id.unwrap_or_else(|| line_id(index)),
            nl: record.nl,
            cnl: record.cnl,
            split: record.split,
        });
    }
    PairCorpus::new(pairs, path.display().to_string(), grammar.is_some())
}

/// Writes the JSONL form read by [`load_jsonl`].
pub fn write_jsonl<W: Write>(corpus: &PairCorpus, mut out: W) -> std::io::Result<()> {
    for pair in corpus.pairs() {
        let record = JsonlOut {
            id: &pair.id,
            nl: &pair.nl,
            cnl: &pair.cnl,
            split: pair.split,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_jsonl(corpus: &PairCorpus, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_jsonl(corpus, &mut out)?;
    out.flush()
}

/// Reads `NL<TAB>CNL` lines. The cnl side is kept as an opaque token
/// sequence, so the corpus is never grammar-bound.
pub fn load_tsv_adapter(path: impl AsRef<Path>) -> Result<PairCorpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (index, line) in text.split('\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(CorpusError::Schema {
                line: index + 1,
                message: format!("expected exactly one tab, found {}", fields.len() - 1),
            });
        }
        pairs.push(NlCnlPair {
            id: line_id(index),
            nl: fields[0].to_string(),
            cnl: fields[1].to_string(),
            split: Split::Unassigned,
        });
    }
    PairCorpus::new(pairs, path.display().to_string(), false)
}
