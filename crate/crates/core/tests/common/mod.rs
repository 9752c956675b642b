#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{DefaultHasher, Hash, Hasher};

use rust_decimal::Decimal;
use rulewright_core::cnl::{Action, Clause, CnlAst, CnlGrammar, Condition, Literal, OperandKind};
use rulewright_core::corpus::Lcg;
use rulewright_core::decoder::{NextTokenDistribution, ScoreError, Scorer};
use rulewright_core::eval::MetricReport;
use rulewright_core::rules::{Record, Value};

/// Grammar exercising all three literal kinds.
pub const MIXED_GRAMMAR: &str = r#"{
  "subjects": ["customer", "loan"],
  "attributes": [
    { "subject": "customer", "phrases": ["age", "name", "vip status"] },
    { "subject": "loan", "phrases": ["amount"] }
  ],
  "comparators": [
    { "phrase": "is greater than", "symbol": ">", "operand": "numeric" },
    { "phrase": "is less than", "symbol": "<", "operand": "numeric" },
    { "phrase": "is at least", "symbol": ">=", "operand": "numeric" },
    { "phrase": "is at most", "symbol": "<=", "operand": "numeric" },
    { "phrase": "equals", "symbol": "==", "operand": "numeric" },
    { "phrase": "is named", "symbol": "==", "operand": "textual" },
    { "phrase": "is flagged", "symbol": "==", "operand": "boolean" }
  ],
  "actions": [
    { "template": "approve the loan", "effects": [{ "effect": "decision", "value": "approve" }] },
    { "template": "set the rate to <NUM>", "effects": [{ "effect": "set", "key": "loan.rate" }] },
    {
      "template": "reject the loan with message <STR>",
      "effects": [{ "effect": "decision", "value": "reject" }, { "effect": "message" }]
    },
    { "template": "mark vip as <BOOL>", "effects": [{ "effect": "set", "key": "customer.vip" }] }
  ]
}"#;

pub fn mixed_grammar() -> CnlGrammar {
    CnlGrammar::from_json(MIXED_GRAMMAR).unwrap()
}

const WORDS: [&str; 6] = ["low score", "hello", "x", "needs review", "ok", "a b c"];

pub fn literal(kind: OperandKind, rng: &mut Lcg) -> Literal {
    match kind {
        OperandKind::Numeric => {
            let mantissa = rng.below(20_001) as i64 - 10_000;
            Literal::Number(Decimal::new(mantissa, rng.below(3) as u32))
        }
        OperandKind::Textual => Literal::Text(rng.choose(&WORDS).to_string()),
        OperandKind::Boolean => Literal::Bool(rng.below(2) == 1),
    }
}

fn clause(grammar: &CnlGrammar, rng: &mut Lcg) -> Condition {
    let subject = rng.choose(grammar.subjects()).clone();
    let attribute = rng.choose(grammar.attributes_of(&subject)).clone();
    let comparator = rng.choose(grammar.comparators()).clone();
    Condition::Clause(Clause {
        subject,
        attribute,
        comparator: comparator.phrase,
        literal: literal(comparator.operand, rng),
    })
}

/// Rule in parser shape: an or-chain of and-chains, both left-leaning.
pub fn sample_ast(grammar: &CnlGrammar, rng: &mut Lcg, max_clauses: usize, max_actions: usize) -> CnlAst {
    let n = 1 + rng.below(max_clauses);
    let mut terms: Vec<Condition> = Vec::new();
    let mut current = clause(grammar, rng);
    for _ in 1..n {
        let next = clause(grammar, rng);
        if rng.below(3) == 0 {
            terms.push(current);
            current = next;
        } else {
            current = Condition::and(current, next);
        }
    }
    terms.push(current);
    let mut condition = terms.remove(0);
    for t in terms {
        condition = Condition::or(condition, t);
    }
    let mut pool: Vec<_> = grammar.actions().to_vec();
    let mut actions = Vec::new();
    for _ in 0..1 + rng.below(max_actions.min(pool.len())) {
        let def = pool.remove(rng.below(pool.len()));
        let argument = def.slot().map(|k| literal(k, rng));
        actions.push(Action::new(&def.template, argument));
    }
    CnlAst { condition, actions }
}

/// Arbitrary binary tree over the same clauses; not necessarily parse shaped.
pub fn sample_tree(grammar: &CnlGrammar, rng: &mut Lcg, depth: usize) -> Condition {
    if depth == 0 || rng.below(3) == 0 {
        return clause(grammar, rng);
    }
    let l = sample_tree(grammar, rng, depth - 1);
    let r = sample_tree(grammar, rng, depth - 1);
    if rng.below(2) == 0 {
        Condition::and(l, r)
    } else {
        Condition::or(l, r)
    }
}

/// Swaps operands of random connectives.
pub fn permute(condition: &Condition, rng: &mut Lcg) -> Condition {
    match condition {
        Condition::Clause(_) => condition.clone(),
        Condition::And(l, r) | Condition::Or(l, r) => {
            let (mut l, mut r) = (permute(l, rng), permute(r, rng));
            if rng.below(2) == 0 {
                std::mem::swap(&mut l, &mut r);
            }
            match condition {
                Condition::And(..) => Condition::and(l, r),
                _ => Condition::or(l, r),
            }
        }
    }
}

fn clauses_of<'a>(c: &'a Condition, out: &mut Vec<&'a Clause>) {
    match c {
        Condition::Clause(x) => out.push(x),
        Condition::And(l, r) | Condition::Or(l, r) => {
            clauses_of(l, out);
            clauses_of(r, out);
        }
    }
}

fn key(c: &Clause) -> String {
    format!("{}.{}", c.subject.replace(' ', "_"), c.attribute.replace(' ', "_"))
}

/// Record over the condition's keys. Values sit near the clause literals;
/// some keys are dropped and, if `mismatches`, some get a value of another kind.
pub fn random_record(condition: &Condition, rng: &mut Lcg, mismatches: bool) -> Record {
    let mut clauses = Vec::new();
    clauses_of(condition, &mut clauses);
    let mut record = Record::new();
    for c in clauses {
        if rng.below(8) == 0 {
            continue;
        }
        let kind = if mismatches && rng.below(10) == 0 {
            [OperandKind::Numeric, OperandKind::Textual, OperandKind::Boolean][rng.below(3)]
        } else {
            c.literal.kind()
        };
        let value = match (&c.literal, kind) {
            (Literal::Number(n), OperandKind::Numeric) => {
                let delta = Decimal::new(rng.below(3) as i64 - 1, rng.below(2) as u32);
                Value::Number(*n + delta)
            }
            (Literal::Text(s), OperandKind::Textual) if rng.below(2) == 0 => Value::Text(s.clone()),
            (Literal::Bool(b), OperandKind::Boolean) if rng.below(2) == 0 => Value::Bool(*b),
            (_, k) => match literal(k, rng) {
                Literal::Number(n) => Value::Number(n),
                Literal::Text(s) => Value::Text(s),
                Literal::Bool(b) => Value::Bool(b),
            },
        };
        record.insert(key(c), value);
    }
    record
}

/// Reference interpreter over the AST. `None` on a kind mismatch reached
/// during left-to-right short-circuit evaluation.
pub fn interpret(condition: &Condition, grammar: &CnlGrammar, record: &Record) -> Option<bool> {
    match condition {
        Condition::Clause(c) => {
            let symbol = grammar.comparator(&c.comparator)?.symbol.as_str();
            let Some(actual) = record.get(&key(c)) else {
                return Some(false);
            };
            match (&c.literal, actual) {
                (Literal::Number(want), Value::Number(have)) => Some(match symbol {
                    ">" => have > want,
                    "<" => have < want,
                    ">=" => have >= want,
                    "<=" => have <= want,
                    "==" => have == want,
                    _ => unreachable!(),
                }),
                (Literal::Text(want), Value::Text(have)) if symbol == "==" => Some(have == want),
                (Literal::Bool(want), Value::Bool(have)) if symbol == "==" => Some(have == want),
                _ => None,
            }
        }
        Condition::And(l, r) => match interpret(l, grammar, record)? {
            false => Some(false),
            true => interpret(r, grammar, record),
        },
        Condition::Or(l, r) => match interpret(l, grammar, record)? {
            true => Some(true),
            false => interpret(r, grammar, record),
        },
    }
}

/// Deterministic pseudo-random next-token model over a fixed vocabulary.
/// Roughly `zero_rate` of tokens get no mass at each prefix.
pub struct RandomScorer {
    pub seed: u64,
    pub vocabulary: Vec<String>,
    pub zero_rate: f64,
}

impl RandomScorer {
    pub fn new(seed: u64, vocabulary: impl IntoIterator<Item = String>, zero_rate: f64) -> Self {
        let vocabulary: BTreeSet<String> = vocabulary.into_iter().collect();
        RandomScorer {
            seed,
            vocabulary: vocabulary.into_iter().collect(),
            zero_rate,
        }
    }

    fn unit(&self, prefix: &[String], token: Option<&str>) -> f64 {
        let mut h = DefaultHasher::new();
        (self.seed, prefix, token).hash(&mut h);
        (h.finish() >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl Scorer for RandomScorer {
    fn score_next(&self, _source: &str, prefix: &[String]) -> Result<NextTokenDistribution, ScoreError> {
        let mut weights = BTreeMap::new();
        let mut total = 0.0;
        for t in self.vocabulary.iter().map(Some).chain([None]) {
            let u = self.unit(prefix, t.map(String::as_str));
            if u < self.zero_rate {
                continue;
            }
            let w = (8.0 * u).exp();
            total += w;
            weights.insert(t.cloned(), w);
        }
        let mut d = NextTokenDistribution {
            tokens: BTreeMap::new(),
            eos: f64::NEG_INFINITY,
        };
        for (t, w) in weights {
            let lp = (w / total).ln();
            match t {
                Some(t) => {
                    d.tokens.insert(t, lp);
                }
                None => d.eos = lp,
            }
        }
        Ok(d)
    }
}

pub fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// BLEU computed by enumerating every n-gram window with nested loops.
pub fn brute_bleu(predictions: &[Vec<String>], references: &[Vec<String>]) -> f64 {
    let (mut c, mut r) = (0usize, 0usize);
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    for (p, q) in predictions.iter().zip(references) {
        c += p.len();
        r += q.len();
        for n in 1..=4 {
            if p.len() < n {
                continue;
            }
            let windows_p: Vec<&[String]> = (0..=p.len() - n).map(|i| &p[i..i + n]).collect();
            let windows_q: Vec<&[String]> = if q.len() >= n {
                (0..=q.len() - n).map(|i| &q[i..i + n]).collect()
            } else {
                vec![]
            };
            total[n - 1] += windows_p.len();
            let mut seen: Vec<&[String]> = Vec::new();
            for w in &windows_p {
                if seen.contains(w) {
                    continue;
                }
                seen.push(w);
                let in_p = windows_p.iter().filter(|x| *x == w).count();
                let in_q = windows_q.iter().filter(|x| *x == w).count();
                matched[n - 1] += in_p.min(in_q);
            }
        }
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (m, t) = if matched[n] == 0 {
            (1.0, total[n] as f64 + 1.0)
        } else {
            (matched[n] as f64, total[n] as f64)
        };
        log_sum += (m / t).ln();
    }
    // exp(1 - r/0) tends to 0
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * (log_sum / 4.0).exp()
}

/// Longest common subsequence by checking every subsequence of the shorter side.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let sub: Vec<&String> = (0..short.len()).filter(|i| mask & (1 << i) != 0).map(|i| &short[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = long.iter();
        if sub.iter().all(|s| it.any(|x| x == *s)) {
            best = sub.len();
        }
    }
    best
}

pub fn brute_rouge(predictions: &[Vec<String>], references: &[Vec<String>]) -> f64 {
    let mut sum = 0.0;
    for (p, q) in predictions.iter().zip(references) {
        if p.is_empty() || q.is_empty() {
            continue;
        }
        let l = brute_lcs(p, q) as f64;
        if l == 0.0 {
            continue;
        }
        let (precision, recall) = (l / p.len() as f64, l / q.len() as f64);
        sum += 2.0 * precision * recall / (precision + recall);
    }
    sum / predictions.len() as f64
}

pub fn random_tokens(rng: &mut Lcg, max_len: usize, alphabet: &[&str]) -> Vec<String> {
    (0..rng.below(max_len + 1)).map(|_| rng.choose(alphabet).to_string()).collect()
}

pub fn report(configuration: &str, constrained: bool, accuracy: f64, seconds: f64) -> MetricReport {
    MetricReport {
        configuration: configuration.into(),
        constrained,
        trie_scope: None,
        accuracy,
        semantic_accuracy: Some(accuracy),
        bleu: 0.5,
        rouge_l: 0.5,
        mean_inference_seconds: seconds,
        n: 120,
        valid: 120,
    }
}

/// Reports behind the golden accuracy table.
pub fn golden_entries() -> Vec<(String, MetricReport)> {
    [
        ("miniloan", report("ngram", false, 0.0083, 0.012)),
        ("miniloan", report("ngram", true, 0.0, 0.0031)),
        ("miniloan", report("mixture", false, 0.4417, 0.0721)),
        ("miniloan", report("mixture", true, 0.5333, 0.0062)),
        ("miniloan-100", report("mixture", false, 0.1167, 0.0705)),
        ("miniloan-100", report("mixture", true, 0.1417, 0.0034)),
        ("miniloan", report("retrieval", false, 0.3051, 0.001)),
    ]
    .into_iter()
    .map(|(d, r)| (d.to_string(), r))
    .collect()
}
