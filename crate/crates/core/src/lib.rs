pub mod cnl;
pub mod corpus;
pub mod decoder;
pub mod eval;
pub mod lm_client;
pub mod pipeline;
pub mod prompt;
pub mod rules;
pub mod trie;
