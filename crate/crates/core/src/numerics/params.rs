use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::NumericsError;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under `name`. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    /// Weight drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, fan-in taken
    /// from the first dimension.
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut R,
    ) -> ParamId {
        let fan_in = shape[0].max(1) as f64;
        self.add(name, Tensor::uniform(shape, 1.0 / fan_in.sqrt(), rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::ones(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| {
                (
                    n.clone(),
                    StoredTensor {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params,
            metadata: BTreeMap::new(),
        }
    }

    /// Overwrites every parameter from `ckpt`. The checkpoint must hold
    /// exactly this store's names with matching shapes.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<(), NumericsError> {
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported format version {}",
                ckpt.format_version
            )));
        }
        for name in ckpt.params.keys() {
            if !self.index.contains_key(name) {
                return Err(NumericsError::Checkpoint(format!("unexpected parameter {name}")));
            }
        }
        for (i, name) in self.names.iter().enumerate() {
            let stored = ckpt
                .params
                .get(name)
                .ok_or_else(|| NumericsError::Checkpoint(format!("missing parameter {name}")))?;
            if stored.shape != self.tensors[i].shape() {
                return Err(NumericsError::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    stored.shape,
                    self.tensors[i].shape()
                )));
            }
            self.tensors[i] = Tensor::new(stored.shape.clone(), stored.data.clone())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// JSON checkpoint document: parameter path -> shape + flat data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: BTreeMap<String, StoredTensor>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        let text = serde_json::to_string(self).map_err(|e| NumericsError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)
            .map_err(|e| NumericsError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NumericsError::Checkpoint(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| NumericsError::Checkpoint(e.to_string()))
    }
}
