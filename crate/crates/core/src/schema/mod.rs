//! Database schemas as typed graphs, question tokenisation, schema linking
//! and the joint relation vocabulary.

mod graph;
mod linking;
mod load;
mod relations;
mod tokenize;

pub use graph::{Adjacency, Column, ColumnSpec, Edge, EdgeLabel, NodeId, NodeKind, SchemaGraph, Table};
pub use linking::{tag_linking, tag_linking_with, LinkMatrix, LinkTag, ValueIndex, DEFAULT_MAX_NGRAM};
pub use load::{load_examples, load_tables, parse_examples, parse_tables, TrainExample};
pub use relations::{build_relation_matrix, schema_relation, Relation, RelationMatrix, MAX_QUESTION_DISTANCE};
pub use tokenize::{normalize_name, tokenize_question};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema {db_id}: {msg}")]
    InvalidSchema { db_id: String, msg: String },
    #[error("parse error{}: {msg}", db_id.as_ref().map(|d| format!(" in {d}")).unwrap_or_default())]
    Parse { db_id: Option<String>, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown database {db_id} (known: {})", known.join(", "))]
    UnknownDatabase { db_id: String, known: Vec<String> },
}
