use std::collections::HashMap;

use super::config::{DataSource, RunConfig};
use super::synthetic;
use super::{HarnessError, Result};
use crate::decoder::question_literals;
use crate::encoder::{EncoderInput, Vocab};
use crate::grammar::{flatten, sql_to_ast, Action};
use crate::schema::{load_examples, load_tables, SchemaGraph, TrainExample, ValueIndex};

/// Schemas and examples for one run.
#[derive(Debug, Default)]
pub struct Dataset {
    pub schemas: HashMap<String, SchemaGraph>,
    pub train: Vec<TrainExample>,
    pub dev: Vec<TrainExample>,
    pub values: HashMap<String, ValueIndex>,
}

impl Dataset {
    pub fn graph(&self, db_id: &str) -> Result<&SchemaGraph> {
        self.schemas
            .get(db_id)
            .ok_or_else(|| HarnessError::UnknownDatabase(db_id.to_string()))
    }

    fn sorted_schemas(&self) -> Vec<&SchemaGraph> {
        let mut v: Vec<_> = self.schemas.values().collect();
        v.sort_by(|a, b| a.db_id.cmp(&b.db_id));
        v
    }
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let (graphs, train, dev) = match &config.data {
        DataSource::Synthetic { count, seed } => {
            let graphs = synthetic::bundled_schemas();
            (graphs, synthetic::generate(*count, *seed), Vec::new())
        }
        DataSource::Files => {
            let tables = config
                .tables
                .as_ref()
                .ok_or_else(|| HarnessError::Config("`tables` is required for file data".into()))?;
            let graphs = load_tables(tables)?;
            let train = match &config.train {
                Some(p) => load_examples(p, &graphs)?,
                None => Vec::new(),
            };
            let dev = match &config.dev {
                Some(p) => load_examples(p, &graphs)?,
                None => Vec::new(),
            };
            (graphs, train, dev)
        }
    };
    let mut values = HashMap::new();
    if let Some(dir) = &config.values {
        for g in &graphs {
            let db_dir = dir.join(&g.db_id);
            if db_dir.is_dir() {
                values.insert(g.db_id.clone(), ValueIndex::from_csv_dir(&db_dir, g)?);
            }
        }
    }
    Ok(Dataset {
        schemas: graphs.into_iter().map(|g| (g.db_id.clone(), g)).collect(),
        train,
        dev,
        values,
    })
}

/// Vocabulary over training question tokens and every schema name token.
pub fn build_vocab(data: &Dataset, buckets: usize) -> Vocab {
    let mut tokens: Vec<&str> = data
        .train
        .iter()
        .flat_map(|e| e.question_tokens.iter().map(String::as_str))
        .collect();
    for g in data.sorted_schemas() {
        for node in g.nodes() {
            tokens.extend(g.tokens(node).iter().map(String::as_str));
        }
    }
    Vocab::build(tokens, buckets)
}

/// An example with its encoder input, gold actions and question literals.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub example: TrainExample,
    pub input: EncoderInput,
    /// `None` when the gold query is outside the grammar.
    pub gold: Option<Vec<Action>>,
    pub gold_error: Option<String>,
    pub literals: Vec<String>,
}

pub fn prepare(example: &TrainExample, graph: &SchemaGraph, vocab: &Vocab, values: Option<&ValueIndex>) -> Result<Prepared> {
    let input = EncoderInput::new(vocab, &example.question_tokens, graph, values)?;
    let (gold, gold_error) = match &example.actions {
        Some(a) => (Some(a.clone()), None),
        None => match sql_to_ast(&example.query, graph) {
            Ok(ast) => (Some(flatten(&ast)), None),
            Err(e) => (None, Some(e.to_string())),
        },
    };
    Ok(Prepared {
        example: example.clone(),
        input,
        gold,
        gold_error,
        literals: question_literals(&example.question),
    })
}

pub fn prepare_all(examples: &[TrainExample], data: &Dataset, vocab: &Vocab) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|e| prepare(e, data.graph(&e.db_id)?, vocab, data.values.get(&e.db_id)))
        .collect()
}
