use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::config::RunConfig;
use super::data::Prepared;
use super::{HarnessError, Result};
use crate::decoder::{DecodeLoss, DecodeOptions, Decoded, Decoder};
use crate::encoder::{Encoder, Vocab};
use crate::grammar::Action;
use crate::layers::Fwd;
use crate::numerics::{Checkpoint, ParamStore, Tape};
use crate::schema::SchemaGraph;

/// Encoder, decoder and their parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

/// Config fields that determine parameter shapes.
const SHAPE_KEYS: [&str; 6] = ["d", "heads", "num_bases", "gpnn_layers", "rat_layers", "hash_buckets"];

impl Model {
    pub fn new(config: &RunConfig, vocab: Vocab) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &config.encoder_config(), &vocab, &mut rng);
        let decoder = Decoder::new(&mut store, &config.decoder_config(), &mut rng);
        Self {
            config: config.clone(),
            vocab,
            store,
            encoder,
            decoder,
        }
    }

    /// Negative log-likelihood of the gold actions of `ex`.
    pub fn loss<'t>(&self, fwd: &Fwd<'t>, ex: &Prepared, graph: &SchemaGraph) -> Result<DecodeLoss<'t>> {
        let gold = ex
            .gold
            .as_ref()
            .ok_or_else(|| HarnessError::Config(format!("example has no gold actions: {}", ex.example.query)))?;
        let enc = self.encoder.encode(fwd, &ex.input)?;
        Ok(self.decoder.loss(fwd, &enc, graph, gold)?)
    }

    pub fn decode_options(&self) -> DecodeOptions {
        self.decoder.default_options()
    }

    pub fn decode(&self, ex: &Prepared, graph: &SchemaGraph, opts: &DecodeOptions) -> Result<Decoded> {
        let tape = Tape::new();
        let fwd = Fwd::new(&tape, &self.store, false);
        let enc = self.encoder.encode(&fwd, &ex.input)?;
        Ok(self.decoder.decode(&fwd, &enc, graph, &ex.literals, opts)?)
    }

    pub fn predict(&self, ex: &Prepared, graph: &SchemaGraph) -> Result<Vec<Action>> {
        Ok(self.decode(ex, graph, &self.decode_options())?.actions)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = self.store.to_checkpoint();
        ckpt.metadata.insert(
            "vocab".into(),
            serde_json::to_value(&self.vocab).expect("vocab serializes"),
        );
        ckpt.metadata.insert(
            "config".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        ckpt
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
        Ok(self.to_checkpoint().save(path)?)
    }

    /// Rebuilds a model from a checkpoint. Shape-determining fields of
    /// `config` must agree with the ones stored in the checkpoint.
    pub fn from_checkpoint(config: &RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        let vocab: Vocab = ckpt
            .metadata
            .get("vocab")
            .cloned()
            .ok_or_else(|| HarnessError::CheckpointMismatch("checkpoint has no vocabulary".into()))
            .and_then(|v| serde_json::from_value(v).map_err(|e| HarnessError::CheckpointMismatch(e.to_string())))?;
        if let Some(stored) = ckpt.metadata.get("config") {
            let current = serde_json::to_value(config).expect("config serializes");
            for key in SHAPE_KEYS {
                let (a, b) = (stored.get(key), current.get(key));
                if a.is_some() && a != b {
                    return Err(HarnessError::CheckpointMismatch(format!(
                        "{key} is {} in the checkpoint but {} in the config",
                        a.unwrap_or(&Value::Null),
                        b.unwrap_or(&Value::Null)
                    )));
                }
            }
        }
        let mut model = Model::new(config, vocab);
        model
            .store
            .load_checkpoint(ckpt)
            .map_err(|e| HarnessError::CheckpointMismatch(e.to_string()))?;
        Ok(model)
    }

    pub fn load(config: &RunConfig, path: &Path) -> Result<Self> {
        Self::from_checkpoint(config, &Checkpoint::load(path)?)
    }
}
