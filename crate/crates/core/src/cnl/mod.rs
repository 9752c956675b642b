//! Controlled natural language for business rules: tokens, grammar, parser,
//! serializer and order-insensitive normalization.
//!
//! Concrete syntax:
//!
//! ```text
//! rule    := "if" cond "then" action {"and" action}
//! cond    := term {"or" term}
//! term    := clause {"and" clause}
//! clause  := subject attribute comparator literal
//! literal := NUMBER | QUOTED_STRING | "true" | "false"
//! ```

mod ast;
mod grammar;
mod parser;
mod token;

pub use ast::{
    normalize, normalize_condition, semantic_equal, serialize, Action, AstError, Clause, CnlAst, Condition,
    Connective, Literal,
};
pub use grammar::{
    literal_from_token, ActionDef, AttributeGroup, CnlGrammar, ComparatorDef, EffectTemplate, GrammarDocument,
    GrammarError, OperandKind, RESERVED_WORDS,
};
pub use parser::{parse, parse_text, CnlError, ParseError};
pub use token::{
    abstract_token, classify_literal, is_numeric_literal, is_quoted_literal, join_tokens, tokenize, tokenize_strings,
    CnlToken, MarkerKind, TokenizeError, NUM_MARKER, STR_MARKER,
};
