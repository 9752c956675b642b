use std::collections::BTreeMap;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Lcg, NlCnlPair, PairCorpus, Split};
use crate::cnl::{serialize, Action, Clause, CnlAst, CnlGrammar, Condition, Connective, Literal, OperandKind};

static MINILOAN_GENERATOR_JSON: &str = include_str!("../../data/miniloan_generator.json");

/// Inclusive range sampled on a grid: `min + k * step`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumericRange {
    pub min: Decimal,
    pub max: Decimal,
    pub step: Decimal,
}

impl NumericRange {
    fn sample(&self, rng: &mut Lcg) -> Decimal {
        let steps = ((self.max - self.min) / self.step).floor();
        let steps: usize = steps.to_string().parse().unwrap_or(0);
        self.min + self.step * Decimal::from(rng.below(steps + 1))
    }
}

/// NL templates for one comparator, optionally only for one attribute.
/// Slots: `{subject}`, `{attribute}`, `{v}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClauseTemplates {
    pub comparator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<String>,
    pub templates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateBank {
    pub clauses: Vec<ClauseTemplates>,
    /// Lexical variants per subject phrase.
    #[serde(default)]
    pub subjects: BTreeMap<String, Vec<String>>,
    /// Lexical variants per attribute phrase.
    #[serde(default)]
    pub attributes: BTreeMap<String, Vec<String>>,
    pub and_words: Vec<String>,
    pub or_words: Vec<String>,
    /// NL renderings per action template; `{v}` receives the slot value.
    pub actions: BTreeMap<String, Vec<String>>,
    /// Whole-rule framings with `{condition}` and `{actions}` slots.
    pub rules: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    /// Number of pairs to emit.
    pub rule_count: usize,
    /// NL paraphrases emitted per sampled rule; the last rule may get fewer.
    #[serde(default = "one")]
    pub paraphrases_per_rule: usize,
    pub max_clauses: usize,
    pub max_actions: usize,
    /// Chance that a connective between clauses is `or`.
    pub or_probability: f64,
    pub templates: TemplateBank,
    /// Value grids keyed by attribute phrase or action template.
    pub numeric_ranges: BTreeMap<String, NumericRange>,
    pub default_range: NumericRange,
    pub messages: Vec<String>,
}

fn one() -> usize {
    1
}

impl GeneratorConfig {
    /// Bundled templates for the loan grammar.
    pub fn miniloan(seed: u64, rule_count: usize) -> Self {
        let mut config: GeneratorConfig =
            serde_json::from_str(MINILOAN_GENERATOR_JSON).expect("bundled generator config is valid");
        config.seed = seed;
        config.rule_count = rule_count;
        config
    }

    pub fn validate(&self, grammar: &CnlGrammar) -> Result<(), String> {
        if self.paraphrases_per_rule == 0 {
            return Err("paraphrases_per_rule must be at least 1".into());
        }
        if self.max_clauses == 0 || self.max_actions == 0 {
            return Err("max_clauses and max_actions must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.or_probability) {
            return Err("or_probability must be in [0, 1]".into());
        }
        if self.messages.is_empty() || self.messages.iter().any(|m| m.contains('"')) {
            return Err("messages must be non-empty and quote-free".into());
        }
        let bank = &self.templates;
        if bank.and_words.is_empty() || bank.or_words.is_empty() || bank.rules.is_empty() {
            return Err("connective and rule templates must be non-empty".into());
        }
        if let Some(r) = bank.rules.iter().find(|r| !r.contains("{condition}") || !r.contains("{actions}")) {
            return Err(format!("rule template {r:?} needs {{condition}} and {{actions}}"));
        }
        for t in bank.clauses.iter().flat_map(|c| &c.templates) {
            if !t.contains("{v}") {
                return Err(format!("clause template {t:?} has no {{v}} slot"));
            }
        }
        for subject in grammar.subjects() {
            for attribute in grammar.attributes_of(subject) {
                for comparator in grammar.comparators() {
                    let n = self.clause_templates(attribute, &comparator.phrase).len();
                    if n < 3 {
                        return Err(format!(
                            "{attribute:?} with {:?} has {n} templates, need at least 3",
                            comparator.phrase
                        ));
                    }
                }
            }
        }
        for action in grammar.actions() {
            let renderings = bank.actions.get(&action.template).filter(|v| !v.is_empty());
            let Some(renderings) = renderings else {
                return Err(format!("no NL renderings for action {:?}", action.template));
            };
            for r in renderings {
                if r.contains("{v}") != (action.arity() == 1) {
                    return Err(format!("action rendering {r:?} does not match the template's arity"));
                }
            }
        }
        Ok(())
    }

    fn clause_templates(&self, attribute: &str, comparator: &str) -> Vec<&str> {
        self.templates
            .clauses
            .iter()
            .filter(|c| c.comparator == comparator && c.attribute.as_deref().is_none_or(|a| a == attribute))
            .flat_map(|c| c.templates.iter().map(String::as_str))
            .collect()
    }

    fn sample_literal(&self, kind: OperandKind, key: &str, rng: &mut Lcg) -> Literal {
        match kind {
            OperandKind::Numeric => {
                let range = self.numeric_ranges.get(key).unwrap_or(&self.default_range);
                Literal::Number(range.sample(rng))
            }
            OperandKind::Textual => Literal::Text(rng.choose(&self.messages).clone()),
            OperandKind::Boolean => Literal::Bool(rng.below(2) == 1),
        }
    }

    /// Draws a rule in the shape the parser produces.
    pub fn sample_ast(&self, grammar: &CnlGrammar, rng: &mut Lcg) -> CnlAst {
        let clause_count = 1 + rng.below(self.max_clauses);
        let mut terms: Vec<Vec<Condition>> = vec![Vec::new()];
        for i in 0..clause_count {
            if i > 0 && rng.next_f64() < self.or_probability {
                terms.push(Vec::new());
            }
            let subject = rng.choose(grammar.subjects()).clone();
            let attribute = rng.choose(grammar.attributes_of(&subject)).clone();
            let comparator = rng.choose(grammar.comparators()).clone();
            let literal = self.sample_literal(comparator.operand, &attribute, rng);
            terms.last_mut().expect("non-empty").push(Condition::Clause(Clause {
                subject,
                attribute,
                comparator: comparator.phrase,
                literal,
            }));
        }
        let condition = Condition::chain(
            Connective::Or,
            terms.into_iter().map(|t| Condition::chain(Connective::And, t)),
        );

        let action_count = 1 + rng.below(self.max_actions.min(grammar.actions().len()));
        let mut available: Vec<usize> = (0..grammar.actions().len()).collect();
        let mut actions = Vec::new();
        for _ in 0..action_count {
            let def = &grammar.actions()[available.remove(rng.below(available.len()))];
            let argument = def.slot().map(|kind| self.sample_literal(kind, &def.template, rng));
            actions.push(Action {
                template: def.template.clone(),
                argument,
            });
        }
        CnlAst { condition, actions }
    }

    fn variant(&self, table: &BTreeMap<String, Vec<String>>, phrase: &str, rng: &mut Lcg) -> String {
        match table.get(phrase).filter(|v| !v.is_empty()) {
            Some(variants) => rng.choose(variants).clone(),
            None => phrase.to_string(),
        }
    }

    /// Renders an NL paraphrase of `ast`.
    pub fn render_nl(&self, ast: &CnlAst, rng: &mut Lcg) -> String {
        let mut condition = String::new();
        self.render_condition(&ast.condition, rng, &mut condition);

        let mut actions = Vec::new();
        for action in &ast.actions {
            let renderings = &self.templates.actions[&action.template];
            let mut text = rng.choose(renderings).clone();
            if let Some(arg) = &action.argument {
                text = text.replace("{v}", &arg.to_string());
            }
            actions.push(text);
        }
        let rule = rng.choose(&self.templates.rules);
        rule.replace("{condition}", &condition)
            .replace("{actions}", &actions.join(" and "))
    }

    fn render_condition(&self, condition: &Condition, rng: &mut Lcg, out: &mut String) {
        match condition {
            Condition::Clause(c) => {
                let templates = self.clause_templates(&c.attribute, &c.comparator);
                let template = templates[rng.below(templates.len())];
                let subject = self.variant(&self.templates.subjects, &c.subject, rng);
                let attribute = self.variant(&self.templates.attributes, &c.attribute, rng);
                out.push_str(
                    &template
                        .replace("{subject}", &subject)
                        .replace("{attribute}", &attribute)
                        .replace("{v}", &c.literal.to_string()),
                );
            }
            Condition::And(l, r) | Condition::Or(l, r) => {
                self.render_condition(l, rng, out);
                let words = match condition.connective() {
                    Some(Connective::Or) => &self.templates.or_words,
                    _ => &self.templates.and_words,
                };
                out.push(' ');
                out.push_str(rng.choose(words));
                out.push(' ');
                self.render_condition(r, rng, out);
            }
        }
    }
}

/// Samples rules from the grammar and pairs each CNL rendering with a
/// templated NL paraphrase. Every cnl parses and no nl equals its cnl.
pub fn generate_synthetic(config: &GeneratorConfig, grammar: &CnlGrammar) -> Result<PairCorpus, CorpusError> {
    config.validate(grammar).map_err(|message| CorpusError::Schema { line: 0, message })?;
    let mut rng = Lcg::new(config.seed);
    let mut pairs = Vec::with_capacity(config.rule_count);
    while pairs.len() < config.rule_count {
        let ast = config.sample_ast(grammar, &mut rng);
        let cnl = serialize(&ast);
        let mut seen: Vec<String> = Vec::new();
        for _ in 0..config.paraphrases_per_rule {
            if pairs.len() == config.rule_count {
                break;
            }
            // a template bank could in principle reproduce the CNL verbatim
            let mut nl = config.render_nl(&ast, &mut rng);
            for _ in 0..8 {
                if nl != cnl && !seen.contains(&nl) {
                    break;
                }
                nl = config.render_nl(&ast, &mut rng);
            }
            if nl == cnl {
                return Err(CorpusError::Schema {
                    line: 0,
                    message: format!("templates cannot paraphrase {cnl:?}"),
                });
            }
            seen.push(nl.clone());
            pairs.push(NlCnlPair {
                id: format!("{:06}", pairs.len()),
                nl,
                cnl: cnl.clone(),
                split: Split::Unassigned,
            });
        }
    }
    let mut corpus = PairCorpus::new(pairs, format!("synthetic(seed={})", config.seed), true)?;
    corpus.seed = Some(config.seed);
    Ok(corpus)
}
