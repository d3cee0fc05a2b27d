use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::graph::{ColumnSpec, SchemaGraph};
use super::tokenize::tokenize_question;
use super::SchemaError;
use crate::grammar::Action;

#[derive(Deserialize)]
struct RawDatabase {
    db_id: String,
    table_names_original: Vec<String>,
    column_names_original: Vec<(i64, String)>,
    column_types: Vec<String>,
    primary_keys: Vec<PrimaryKey>,
    foreign_keys: Vec<(usize, usize)>,
}

/// Spider stores single-column keys as integers and composite keys as lists.
#[derive(Deserialize)]
#[serde(untagged)]
enum PrimaryKey {
    Single(usize),
    Composite(Vec<usize>),
}

/// Reads a Spider-layout `tables.json`.
pub fn load_tables(path: &Path) -> Result<Vec<SchemaGraph>, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_tables(&text)
}

pub fn parse_tables(text: &str) -> Result<Vec<SchemaGraph>, SchemaError> {
    let values: Vec<Value> = serde_json::from_str(text).map_err(|e| SchemaError::Parse {
        db_id: None,
        msg: e.to_string(),
    })?;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let db_id = v
                .get("db_id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("<entry {i}>"));
            let raw: RawDatabase = serde_json::from_value(v).map_err(|e| SchemaError::Parse {
                db_id: Some(db_id.clone()),
                msg: e.to_string(),
            })?;
            build(raw)
        })
        .collect()
}

fn build(raw: RawDatabase) -> Result<SchemaGraph, SchemaError> {
    if raw.column_types.len() != raw.column_names_original.len() {
        return Err(SchemaError::Parse {
            db_id: Some(raw.db_id),
            msg: format!(
                "{} column types for {} columns",
                raw.column_types.len(),
                raw.column_names_original.len()
            ),
        });
    }
    let columns = raw
        .column_names_original
        .iter()
        .zip(&raw.column_types)
        .map(|((t, name), ty)| ColumnSpec {
            table: usize::try_from(*t).ok(),
            name: name.clone(),
            value_type: ty.clone(),
        })
        .collect();
    let primary_keys = raw
        .primary_keys
        .into_iter()
        .flat_map(|pk| match pk {
            PrimaryKey::Single(c) => vec![c],
            PrimaryKey::Composite(cs) => cs,
        })
        .collect();
    SchemaGraph::new(
        &raw.db_id,
        &raw.table_names_original,
        columns,
        primary_keys,
        raw.foreign_keys,
    )
}

/// A question paired with its gold query.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub db_id: String,
    pub question: String,
    pub question_tokens: Vec<String>,
    pub query: String,
    /// Gold action sequence; filled in once the query is parsed.
    pub actions: Option<Vec<Action>>,
}

impl TrainExample {
    pub fn new(db_id: &str, question: &str, query: &str) -> Self {
        Self {
            db_id: db_id.to_string(),
            question: question.to_string(),
            question_tokens: tokenize_question(question),
            query: query.to_string(),
            actions: None,
        }
    }
}

#[derive(Deserialize)]
struct RawExample {
    db_id: String,
    question: String,
    query: String,
}

/// Reads a Spider-layout examples file (`train_spider.json`, `dev.json`, ...).
pub fn load_examples(path: &Path, schemas: &[SchemaGraph]) -> Result<Vec<TrainExample>, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_examples(&text, schemas)
}

pub fn parse_examples(text: &str, schemas: &[SchemaGraph]) -> Result<Vec<TrainExample>, SchemaError> {
    let raw: Vec<RawExample> = serde_json::from_str(text).map_err(|e| SchemaError::Parse {
        db_id: None,
        msg: e.to_string(),
    })?;
    raw.into_iter()
        .map(|r| {
            if !schemas.iter().any(|s| s.db_id == r.db_id) {
                return Err(SchemaError::UnknownDatabase {
                    db_id: r.db_id,
                    known: schemas.iter().map(|s| s.db_id.clone()).collect(),
                });
            }
            Ok(TrainExample::new(&r.db_id, &r.question, &r.query))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::EdgeLabel;

    const TABLES: &str = r#"[{
        "db_id": "soccer",
        "table_names_original": ["team", "match_season"],
        "table_names": ["team", "match season"],
        "column_names_original": [[-1, "*"], [0, "Team_id"], [0, "Name"], [1, "Season"], [1, "Team"], [1, "Player"], [1, "College"], [1, "Country"]],
        "column_names": [[-1, "*"], [0, "team id"], [0, "name"], [1, "season"], [1, "team"], [1, "player"], [1, "college"], [1, "country"]],
        "column_types": ["text", "number", "text", "number", "number", "text", "text", "text"],
        "primary_keys": [1, 3],
        "foreign_keys": [[4, 1]]
    }]"#;

    #[test]
    fn parses_spider_layout() {
        let graphs = parse_tables(TABLES).unwrap();
        let g = &graphs[0];
        assert_eq!(g.num_nodes(), 2 + 8);
        assert_eq!(g.tables[1].tokens, vec!["match", "season"]);
        assert!(g.reverse_edges_complete());
    }

    #[test]
    fn foreign_key_materialises_both_directions() {
        let text = TABLES.replace("[[4, 1]]", "[[3, 7]]");
        let g = &parse_tables(&text).unwrap()[0];
        let (a, b) = (g.column_node(3), g.column_node(7));
        assert!(g
            .edges
            .iter()
            .any(|e| e.src == a && e.dst == b && e.label == EdgeLabel::ForeignKeyForward));
        assert!(g
            .edges
            .iter()
            .any(|e| e.src == b && e.dst == a && e.label == EdgeLabel::ForeignKeyBackward));
    }

    #[test]
    fn dangling_foreign_key_reports_db_id() {
        let text = TABLES.replace("[[4, 1]]", "[[4, 99]]");
        let err = parse_tables(&text).unwrap_err().to_string();
        assert!(err.contains("soccer") && err.contains("99"), "{err}");
    }

    #[test]
    fn missing_field_reports_db_id() {
        let text = TABLES.replace("\"column_types\"", "\"column_typez\"");
        let err = parse_tables(&text).unwrap_err().to_string();
        assert!(err.contains("soccer") && err.contains("column_types"), "{err}");
    }

    #[test]
    fn examples_resolve_db_ids() {
        let graphs = parse_tables(TABLES).unwrap();
        assert!(parse_examples("[]", &graphs).unwrap().is_empty());
        let ok = r#"[{"db_id": "soccer", "question": "List team names.", "query": "SELECT name FROM team"}]"#;
        let ex = parse_examples(ok, &graphs).unwrap();
        assert_eq!(ex[0].question_tokens, vec!["list", "team", "names", "."]);
        let bad = ok.replace("\"soccer\"", "\"nope\"");
        let err = parse_examples(&bad, &graphs).unwrap_err().to_string();
        assert!(err.contains("nope") && err.contains("soccer"), "{err}");
    }
}
