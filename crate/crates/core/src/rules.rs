//! JSON rule programs: transpiled from CNL ASTs and evaluated against records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::cnl::{CnlAst, CnlGrammar, Condition, EffectTemplate, Literal};

/// Record or predicate value. Numbers are exact decimals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Number(Decimal),
    Text(String),
    Bool(bool),
}

impl Value {
    pub fn kind(&self) -> &'static str {
        match self {
            Value::Number(_) => "number",
            Value::Text(_) => "string",
            Value::Bool(_) => "boolean",
        }
    }
}

impl From<&Literal> for Value {
    fn from(l: &Literal) -> Self {
        match l {
            Literal::Number(n) => Value::Number(*n),
            Literal::Text(s) => Value::Text(s.clone()),
            Literal::Bool(b) => Value::Bool(*b),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(n) => write!(f, "{n}"),
            Value::Text(s) => write!(f, "{s:?}"),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Number(n) => {
                let number: serde_json::Number =
                    serde_json::from_str(&n.to_string()).map_err(serde::ser::Error::custom)?;
                number.serialize(serializer)
            }
            Value::Text(s) => serializer.serialize_str(s),
            Value::Bool(b) => serializer.serialize_bool(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(deserializer)? {
            serde_json::Value::Number(n) => {
                let text = n.to_string();
                Decimal::from_str(&text)
                    .or_else(|_| Decimal::from_scientific(&text))
                    .map(Value::Number)
                    .map_err(|e| de::Error::custom(format!("number {text} out of range: {e}")))
            }
            serde_json::Value::String(s) => Ok(Value::Text(s)),
            serde_json::Value::Bool(b) => Ok(Value::Bool(b)),
            other => Err(de::Error::custom(format!(
                "expected a number, string or boolean, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Gt => ">",
            Op::Lt => "<",
            Op::Ge => ">=",
            Op::Le => "<=",
            Op::Eq => "==",
        }
    }

    pub fn from_symbol(symbol: &str) -> Option<Op> {
        Some(match symbol {
            ">" => Op::Gt,
            "<" => Op::Lt,
            ">=" => Op::Ge,
            "<=" => Op::Le,
            "==" => Op::Eq,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predicate {
    pub key: String,
    pub op: Op,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum When {
    And(Vec<When>),
    Or(Vec<When>),
    Pred(Predicate),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "lowercase", deny_unknown_fields)]
pub enum Effect {
    Decision { value: String },
    Set { key: String, value: Value },
    Message { text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleProgram {
    pub name: String,
    pub when: When,
    pub then: Vec<Effect>,
}

impl RuleProgram {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub type Record = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranspileError {
    #[error("comparator {phrase:?} maps to unsupported symbol {symbol:?}")]
    UnsupportedComparator { phrase: String, symbol: String },
    #[error("comparator {0:?} is not in the grammar")]
    UnknownComparator(String),
    #[error("action {0:?} is not in the grammar")]
    UnknownAction(String),
    #[error("action {0:?} needs an argument for its effect")]
    MissingArgument(String),
}

/// `subject.attribute` with spaces in each part replaced by underscores.
pub fn predicate_key(subject: &str, attribute: &str) -> String {
    format!("{}.{}", subject.replace(' ', "_"), attribute.replace(' ', "_"))
}

fn transpile_condition(condition: &Condition, grammar: &CnlGrammar) -> Result<When, TranspileError> {
    Ok(match condition {
        Condition::Clause(c) => {
            let def = grammar
                .comparator(&c.comparator)
                .ok_or_else(|| TranspileError::UnknownComparator(c.comparator.clone()))?;
            let op = Op::from_symbol(&def.symbol).ok_or_else(|| TranspileError::UnsupportedComparator {
                phrase: def.phrase.clone(),
                symbol: def.symbol.clone(),
            })?;
            When::Pred(Predicate {
                key: predicate_key(&c.subject, &c.attribute),
                op,
                value: Value::from(&c.literal),
            })
        }
        Condition::And(l, r) => When::And(vec![transpile_condition(l, grammar)?, transpile_condition(r, grammar)?]),
        Condition::Or(l, r) => When::Or(vec![transpile_condition(l, grammar)?, transpile_condition(r, grammar)?]),
    })
}

/// Maps each clause to a predicate and each action to its grammar effects,
/// keeping the condition tree shape.
pub fn transpile(ast: &CnlAst, grammar: &CnlGrammar, name: &str) -> Result<RuleProgram, TranspileError> {
    let when = transpile_condition(&ast.condition, grammar)?;
    let mut then = Vec::new();
    for action in &ast.actions {
        let def = grammar
            .action(&action.template)
            .ok_or_else(|| TranspileError::UnknownAction(action.template.clone()))?;
        for effect in &def.effects {
            let argument = || {
                action
                    .argument
                    .as_ref()
                    .ok_or_else(|| TranspileError::MissingArgument(action.template.clone()))
            };
            then.push(match effect {
                EffectTemplate::Decision { value } => Effect::Decision { value: value.clone() },
                EffectTemplate::Set { key } => Effect::Set {
                    key: key.clone(),
                    value: Value::from(argument()?),
                },
                EffectTemplate::Message => Effect::Message {
                    text: match argument()? {
                        Literal::Text(s) => s.clone(),
                        other => other.to_string(),
                    },
                },
            });
        }
    }
    Ok(RuleProgram {
        name: name.to_string(),
        when,
        then,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum ExecuteError {
    #[error("predicate {key} {op} {value} cannot compare a {found} value")]
    TypeMismatch {
        key: String,
        op: &'static str,
        value: String,
        found: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PredicateOutcome {
    pub key: String,
    pub op: Op,
    pub value: Value,
    pub result: bool,
    pub missing: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ExecutionTrace {
    pub fired: bool,
    /// Evaluated predicates in evaluation order; short-circuited ones are absent.
    pub predicates: Vec<PredicateOutcome>,
    pub missing: Vec<String>,
    pub decision: Option<String>,
    pub message: Option<String>,
    /// Attribute updates from `set` effects.
    pub updates: Record,
}

fn compare(p: &Predicate, actual: &Value) -> Result<bool, ExecuteError> {
    let mismatch = || ExecuteError::TypeMismatch {
        key: p.key.clone(),
        op: p.op.symbol(),
        value: p.value.to_string(),
        found: actual.kind(),
    };
    match (&p.value, actual) {
        (Value::Number(want), Value::Number(have)) => Ok(match p.op {
            Op::Gt => have > want,
            Op::Lt => have < want,
            Op::Ge => have >= want,
            Op::Le => have <= want,
            Op::Eq => have == want,
        }),
        (Value::Text(want), Value::Text(have)) if p.op == Op::Eq => Ok(have == want),
        (Value::Bool(want), Value::Bool(have)) if p.op == Op::Eq => Ok(have == want),
        _ => Err(mismatch()),
    }
}

fn evaluate(when: &When, record: &Record, trace: &mut ExecutionTrace) -> Result<bool, ExecuteError> {
    match when {
        When::Pred(p) => {
            let (result, missing) = match record.get(&p.key) {
                Some(actual) => (compare(p, actual)?, false),
                None => {
                    if !trace.missing.contains(&p.key) {
                        trace.missing.push(p.key.clone());
                    }
                    (false, true)
                }
            };
            trace.predicates.push(PredicateOutcome {
                key: p.key.clone(),
                op: p.op,
                value: p.value.clone(),
                result,
                missing,
            });
            Ok(result)
        }
        When::And(items) => {
            for item in items {
                if !evaluate(item, record, trace)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        When::Or(items) => {
            for item in items {
                if evaluate(item, record, trace)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
    }
}

/// Evaluates the condition left to right with short-circuiting and applies
/// the effects if it holds. Missing keys make their predicate false.
pub fn execute(program: &RuleProgram, record: &Record) -> Result<ExecutionTrace, ExecuteError> {
    let mut trace = ExecutionTrace::default();
    trace.fired = evaluate(&program.when, record, &mut trace)?;
    if trace.fired {
        for effect in &program.then {
            match effect {
                Effect::Decision { value } => trace.decision = Some(value.clone()),
                Effect::Set { key, value } => {
                    trace.updates.insert(key.clone(), value.clone());
                }
                Effect::Message { text } => trace.message = Some(text.clone()),
            }
        }
    }
    Ok(trace)
}
