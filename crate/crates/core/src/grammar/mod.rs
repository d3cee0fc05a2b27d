//! SemQL: a typed tree over the Spider SQL surface, its production table,
//! SQL parsing and emission, action sequences and the recover metric.

mod actions;
mod ast;
mod canonical;
mod emit;
mod lexer;
mod parser;
mod recover;
pub mod rules;

pub use actions::{flatten, flatten_tree, unflatten, unflatten_tree, Action, Cursor};
pub use ast::*;
pub use canonical::canonicalize;
pub use emit::ast_to_sql;
pub use parser::{quote, sql_to_ast};
pub use recover::{coverage, parse_corpus, recover_rate, recover_report, recovers, roundtrip, GoldenQuery, RecoverReport};
pub use rules::{Kind, Rule, RuleId, Slot};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("unsupported SQL: {0}")]
    UnsupportedSql(String),
    #[error("bind error: {0}")]
    BindError(String),
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("action sequence ended before the derivation was complete")]
    IncompleteSequence,
    #[error("grammar violation{}: {msg}", position.map(|p| format!(" at action {p}")).unwrap_or_default())]
    GrammarViolation { position: Option<usize>, msg: String },
}
