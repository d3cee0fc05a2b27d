//! Data preparation, training, evaluation and diagnostics around the model.

pub mod config;
pub mod data;
pub mod diagnose;
pub mod eval;
pub mod hardness;
pub mod model;
pub mod subsample;
pub mod synthetic;
pub mod train;

use std::path::Path;

use thiserror::Error;

pub use config::{DataSource, RunConfig};
pub use data::{build_vocab, load_dataset, prepare, prepare_all, Dataset, Prepared};
pub use diagnose::{cosine_grid, diagnose_abstraction, write_grid_csv};
pub use eval::{evaluate, EvalReport, ModelPredictor, OraclePredictor, Predictor};
pub use hardness::{hardness, Hardness};
pub use model::Model;
pub use subsample::subsample;
pub use train::{train, TrainReport};

use crate::decoder::DecoderError;
use crate::grammar::GrammarError;
use crate::layers::LayerError;
use crate::numerics::NumericsError;
use crate::schema::SchemaError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("checkpoint does not match config: {0}")]
    CheckpointMismatch(String),
    #[error("no examples to {0}")]
    EmptyCorpus(&'static str),
    #[error("unknown database {0}")]
    UnknownDatabase(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
