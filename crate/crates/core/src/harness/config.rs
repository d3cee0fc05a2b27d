use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;

/// Where training data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Spider-layout files given by the path fields.
    Files,
    /// Templated examples over the bundled schemas.
    Synthetic { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub tables: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    /// Directory of `<db_id>/<table>.csv` files for value linking.
    pub values: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub run_dir: PathBuf,

    pub d: usize,
    pub heads: usize,
    pub num_bases: usize,
    pub gpnn_layers: usize,
    pub rat_layers: usize,
    pub dropout: f64,
    pub scaled_projection_attention: bool,
    pub hash_buckets: usize,

    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beam_size: usize,
    pub max_decode_len: usize,
    /// Stop once training exact match reaches this value (checked each epoch).
    pub target_train_exact_match: Option<f64>,
    /// Evaluate on the training set each epoch instead of the dev set.
    pub eval_on_train: bool,
    /// Compare literal values in exact match.
    pub value_sensitive: bool,
    /// Wall-clock limit for training in seconds.
    pub time_limit_secs: Option<f64>,
    /// Worker threads for evaluation; 0 uses the rayon default.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Files,
            tables: None,
            train: None,
            dev: None,
            values: None,
            checkpoint: PathBuf::from("checkpoint.json"),
            run_dir: PathBuf::from("runs"),
            d: 512,
            heads: 8,
            num_bases: 8,
            gpnn_layers: 4,
            rat_layers: 4,
            dropout: 0.3,
            scaled_projection_attention: false,
            hash_buckets: 256,
            lr: 2e-4,
            batch_size: 16,
            epochs: 50,
            seed: 0,
            beam_size: 5,
            max_decode_len: 128,
            target_train_exact_match: None,
            eval_on_train: false,
            value_sensitive: false,
            time_limit_secs: None,
            threads: 0,
        }
    }
}

impl RunConfig {
    /// Small-model settings for overfitting the synthetic corpus.
    pub fn overfit() -> Self {
        Self {
            data: DataSource::Synthetic { count: 50, seed: 0 },
            d: 32,
            heads: 4,
            num_bases: 4,
            gpnn_layers: 2,
            rat_layers: 2,
            dropout: 0.0,
            hash_buckets: 64,
            epochs: 2000,
            eval_on_train: true,
            target_train_exact_match: Some(0.95),
            time_limit_secs: Some(600.0),
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let config: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Applies `key=value` overrides; values are parsed as JSON, falling back to strings.
    pub fn with_overrides<S: AsRef<str>>(self, overrides: &[S]) -> Result<Self, HarnessError> {
        let mut value = serde_json::to_value(&self).map_err(|e| HarnessError::Config(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override {item:?} is not key=value")))?;
            let map = value.as_object_mut().expect("config serializes to an object");
            if !map.contains_key(key) {
                return Err(HarnessError::Config(format!("unknown config key {key}")));
            }
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            map.insert(key.to_string(), parsed);
        }
        let config: Self = serde_json::from_value(value).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("d={} must be a positive multiple of heads={}", self.d, self.heads));
        }
        if self.num_bases == 0 || self.hash_buckets == 0 || self.beam_size == 0 {
            return bad("num_bases, hash_buckets and beam_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d: self.d,
            heads: self.heads,
            num_bases: self.num_bases,
            gpnn_layers: self.gpnn_layers,
            rat_layers: self.rat_layers,
            dropout: self.dropout,
            scaled_projection_attention: self.scaled_projection_attention,
            hash_buckets: self.hash_buckets,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            d: self.d,
            beam_size: self.beam_size,
            max_len: self.max_decode_len,
        }
    }
}
