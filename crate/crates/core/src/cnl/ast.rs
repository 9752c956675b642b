use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::{CnlGrammar, OperandKind};
use super::token::{NUM_MARKER, STR_MARKER};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Literal {
    Number(Decimal),
    /// Quoted string, stored without the quotes.
    Text(String),
    Bool(bool),
}

impl Literal {
    pub fn kind(&self) -> OperandKind {
        match self {
            Literal::Number(_) => OperandKind::Numeric,
            Literal::Text(_) => OperandKind::Textual,
            Literal::Bool(_) => OperandKind::Boolean,
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(n) => write!(f, "{n}"),
            Literal::Text(s) => write!(f, "\"{s}\""),
            Literal::Bool(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Clause {
    pub subject: String,
    pub attribute: String,
    pub comparator: String,
    pub literal: Literal,
}

impl Clause {
    pub fn new(subject: &str, attribute: &str, comparator: &str, literal: Literal) -> Self {
        Self {
            subject: subject.into(),
            attribute: attribute.into(),
            comparator: comparator.into(),
            literal,
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.subject, self.attribute, self.comparator, self.literal
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connective {
    And,
    Or,
}

impl Connective {
    pub fn word(self) -> &'static str {
        match self {
            Connective::And => "and",
            Connective::Or => "or",
        }
    }
}

/// Binary condition tree over clauses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Clause(Clause),
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
}

impl Condition {
    pub fn and(left: Condition, right: Condition) -> Self {
        Condition::And(Box::new(left), Box::new(right))
    }

    pub fn or(left: Condition, right: Condition) -> Self {
        Condition::Or(Box::new(left), Box::new(right))
    }

    pub fn join(connective: Connective, left: Condition, right: Condition) -> Self {
        match connective {
            Connective::And => Self::and(left, right),
            Connective::Or => Self::or(left, right),
        }
    }

    /// Left-leaning chain over `operands`. Panics on an empty list.
    pub fn chain(connective: Connective, operands: impl IntoIterator<Item = Condition>) -> Self {
        let mut iter = operands.into_iter();
        let first = iter.next().expect("chain needs at least one operand");
        iter.fold(first, |acc, next| Self::join(connective, acc, next))
    }

    pub fn connective(&self) -> Option<Connective> {
        match self {
            Condition::Clause(_) => None,
            Condition::And(..) => Some(Connective::And),
            Condition::Or(..) => Some(Connective::Or),
        }
    }

    pub fn clauses(&self) -> Vec<&Clause> {
        let mut out = Vec::new();
        self.collect_clauses(&mut out);
        out
    }

    fn collect_clauses<'a>(&'a self, out: &mut Vec<&'a Clause>) {
        match self {
            Condition::Clause(c) => out.push(c),
            Condition::And(l, r) | Condition::Or(l, r) => {
                l.collect_clauses(out);
                r.collect_clauses(out);
            }
        }
    }

    /// True for the trees the parser produces: a left-leaning `or` chain of
    /// left-leaning `and` chains. Only these survive a text round trip.
    pub fn is_parse_shaped(&self) -> bool {
        fn and_chain(c: &Condition) -> bool {
            match c {
                Condition::Clause(_) => true,
                Condition::And(l, r) => matches!(**r, Condition::Clause(_)) && and_chain(l),
                Condition::Or(..) => false,
            }
        }
        match self {
            Condition::Or(l, r) => and_chain(r) && l.is_parse_shaped(),
            other => and_chain(other),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Clause(c) => write!(f, "{c}"),
            Condition::And(l, r) => write!(f, "{l} and {r}"),
            Condition::Or(l, r) => write!(f, "{l} or {r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    /// Template of the grammar action, e.g. `set the rate to <NUM>`.
    pub template: String,
    pub argument: Option<Literal>,
}

impl Action {
    pub fn new(template: &str, argument: Option<Literal>) -> Self {
        Self {
            template: template.into(),
            argument,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for word in self.template.split_whitespace() {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            let is_slot = word == NUM_MARKER || word == STR_MARKER || word == "<BOOL>";
            match (&self.argument, is_slot) {
                (Some(arg), true) => write!(f, "{arg}")?,
                _ => f.write_str(word)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CnlAst {
    pub condition: Condition,
    pub actions: Vec<Action>,
}

impl fmt::Display for CnlAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "if {} then ", self.condition)?;
        for (i, action) in self.actions.iter().enumerate() {
            if i > 0 {
                f.write_str(" and ")?;
            }
            write!(f, "{action}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AstError {
    #[error("unknown subject {0:?}")]
    UnknownSubject(String),
    #[error("subject {subject:?} has no attribute {attribute:?}")]
    UnknownAttribute { subject: String, attribute: String },
    #[error("unknown comparator {0:?}")]
    UnknownComparator(String),
    #[error("comparator {comparator:?} takes a {expected:?} operand")]
    OperandKind {
        comparator: String,
        expected: OperandKind,
    },
    #[error("unknown action {0:?}")]
    UnknownAction(String),
    #[error("action {0:?} has the wrong argument")]
    ActionArgument(String),
    #[error("rule has no actions")]
    NoActions,
}

impl CnlAst {
    /// Checks every clause and action against `grammar`.
    pub fn validate(&self, grammar: &CnlGrammar) -> Result<(), AstError> {
        for clause in self.condition.clauses() {
            if !grammar.subjects().contains(&clause.subject) {
                return Err(AstError::UnknownSubject(clause.subject.clone()));
            }
            if !grammar.attributes_of(&clause.subject).contains(&clause.attribute) {
                return Err(AstError::UnknownAttribute {
                    subject: clause.subject.clone(),
                    attribute: clause.attribute.clone(),
                });
            }
            let comparator = grammar
                .comparator(&clause.comparator)
                .ok_or_else(|| AstError::UnknownComparator(clause.comparator.clone()))?;
            if comparator.operand != clause.literal.kind() {
                return Err(AstError::OperandKind {
                    comparator: clause.comparator.clone(),
                    expected: comparator.operand,
                });
            }
        }
        if self.actions.is_empty() {
            return Err(AstError::NoActions);
        }
        for action in &self.actions {
            let def = grammar
                .action(&action.template)
                .ok_or_else(|| AstError::UnknownAction(action.template.clone()))?;
            if def.slot() != action.argument.as_ref().map(Literal::kind) {
                return Err(AstError::ActionArgument(action.template.clone()));
            }
        }
        Ok(())
    }
}

/// Renders an AST as CNL text with single spaces.
pub fn serialize(ast: &CnlAst) -> String {
    ast.to_string()
}

/// Canonical form for order-insensitive comparison: same-connective chains
/// are flattened, their operands sorted by serialized text, and rebuilt as
/// left-leaning trees. Actions keep their order.
pub fn normalize(ast: &CnlAst) -> CnlAst {
    CnlAst {
        condition: normalize_condition(&ast.condition),
        actions: ast.actions.clone(),
    }
}

pub fn normalize_condition(condition: &Condition) -> Condition {
    let Some(connective) = condition.connective() else {
        return condition.clone();
    };
    let mut operands = Vec::new();
    flatten(condition, connective, &mut operands);
    let mut keyed: Vec<(String, Condition)> = operands
        .into_iter()
        .map(|op| {
            let op = normalize_condition(op);
            (op.to_string(), op)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    Condition::chain(connective, keyed.into_iter().map(|(_, op)| op))
}

fn flatten<'a>(condition: &'a Condition, connective: Connective, out: &mut Vec<&'a Condition>) {
    match condition {
        Condition::And(l, r) if connective == Connective::And => {
            flatten(l, connective, out);
            flatten(r, connective, out);
        }
        Condition::Or(l, r) if connective == Connective::Or => {
            flatten(l, connective, out);
            flatten(r, connective, out);
        }
        other => out.push(other),
    }
}

/// Equality up to reordering of `and`/`or` operands.
pub fn semantic_equal(a: &CnlAst, b: &CnlAst) -> bool {
    normalize(a) == normalize(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn num(n: i64) -> Literal {
        Literal::Number(Decimal::from(n))
    }

    fn clause(attr: &str, n: i64) -> Condition {
        Condition::Clause(Clause::new("customer", attr, "is greater than", num(n)))
    }

    fn rule(condition: Condition) -> CnlAst {
        CnlAst {
            condition,
            actions: vec![Action::new("approve the loan", None)],
        }
    }

    #[test]
    fn serializes_single_clause() {
        let ast = rule(clause("age", 18));
        assert_eq!(
            serialize(&ast),
            "if customer age is greater than 18 then approve the loan"
        );
    }

    #[test]
    fn serializes_actions_with_arguments() {
        let ast = CnlAst {
            condition: clause("age", 18),
            actions: vec![
                Action::new("reject the loan with message <STR>", Some(Literal::Text("too young".into()))),
                Action::new("set the rate to <NUM>", Some(Literal::Number("4.50".parse().unwrap()))),
            ],
        };
        assert_eq!(
            serialize(&ast),
            "if customer age is greater than 18 then reject the loan with message \"too young\" and set the rate to 4.50"
        );
    }

    #[test]
    fn normalize_sorts_two_operands() {
        let a = clause("age", 18);
        let b = clause("credit score", 600);
        // "customer age ..." sorts before "customer credit score ..."
        let n = normalize(&rule(Condition::and(b.clone(), a.clone())));
        assert_eq!(n.condition, Condition::and(a, b));
    }

    #[test]
    fn normalize_flattens_right_nested_chain() {
        let a = clause("age", 1);
        let b = clause("age", 2);
        let c = clause("age", 3);
        let input = Condition::and(a.clone(), Condition::and(c.clone(), b.clone()));
        let expected = Condition::and(Condition::and(a, b), c);
        assert_eq!(normalize_condition(&input), expected);
        assert!(normalize_condition(&input).is_parse_shaped());
    }

    #[test]
    fn normalize_keeps_mixed_connectives_apart() {
        let a = clause("age", 1);
        let b = clause("age", 2);
        let c = clause("age", 3);
        let input = Condition::or(Condition::and(b.clone(), a.clone()), c.clone());
        let expected = Condition::or(Condition::and(a, b), c);
        assert_eq!(normalize_condition(&input), expected);
    }

    #[test]
    fn semantic_equality() {
        let a = clause("age", 18);
        let b = clause("credit score", 600);
        let ab = rule(Condition::and(a.clone(), b.clone()));
        let ba = rule(Condition::and(b.clone(), a.clone()));
        assert!(semantic_equal(&ab, &ba));
        assert!(semantic_equal(&ab, &ab));
        assert!(!semantic_equal(&ab, &rule(Condition::or(a.clone(), b.clone()))));
        assert!(!semantic_equal(&rule(clause("age", 18)), &rule(clause("age", 19))));
    }

    #[test]
    fn parse_shape_detection() {
        let a = clause("age", 1);
        assert!(Condition::or(Condition::and(a.clone(), a.clone()), a.clone()).is_parse_shaped());
        assert!(!Condition::and(a.clone(), Condition::and(a.clone(), a.clone())).is_parse_shaped());
        assert!(!Condition::and(Condition::or(a.clone(), a.clone()), a.clone()).is_parse_shaped());
    }

    #[test]
    fn validate_against_grammar() {
        let g = CnlGrammar::miniloan();
        assert!(rule(clause("age", 18)).validate(&g).is_ok());
        let bad = rule(Condition::Clause(Clause::new("loan", "age", "equals", num(1))));
        assert!(matches!(bad.validate(&g), Err(AstError::UnknownAttribute { .. })));
        let bad = rule(Condition::Clause(Clause::new(
            "loan",
            "amount",
            "equals",
            Literal::Text("x".into()),
        )));
        assert!(matches!(bad.validate(&g), Err(AstError::OperandKind { .. })));
        let bad = CnlAst {
            condition: clause("age", 1),
            actions: vec![Action::new("set the rate to <NUM>", None)],
        };
        assert!(matches!(bad.validate(&g), Err(AstError::ActionArgument(_))));
    }
}
