//! Checkpoint container.
//!
//! ```text
//! "VTXC" | version: u8 | header_len: u32 LE | header: UTF-8 JSON | payload
//! ```
//!
//! The header holds the model config, the parameter seed, the name and shape
//! of every stored tensor, and free-form metadata. The payload is every tensor
//! in header order as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{param_specs, InitOptions, Model, ModelConfig, ModelError};
use crate::numerics::{ParameterStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VTXC";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    param_seed: u64,
    tensors: Vec<Entry>,
    meta: Value,
}

/// Model parameters plus any auxiliary tensors (optimizer moments) and
/// metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub param_seed: u64,
    pub tensors: Vec<(String, Tensor)>,
    pub meta: Value,
}

fn io_err(path: &Path, e: std::io::Error) -> ModelError {
    ModelError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => "absent".into(),
        other => other.to_string(),
    }
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Self {
            config: model.config.clone(),
            param_seed: model.params.seed(),
            tensors: model.params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            meta: Value::Null,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Fails with [`ModelError::ConfigMismatch`] naming the first field that
    /// differs from `expected`.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<(), ModelError> {
        let (Value::Object(want), Value::Object(have)) = (
            serde_json::to_value(expected).map_err(|e| ModelError::Corrupt(e.to_string()))?,
            serde_json::to_value(&self.config).map_err(|e| ModelError::Corrupt(e.to_string()))?,
        ) else {
            return Err(ModelError::Corrupt("config is not a JSON object".into()));
        };
        for (field, w) in &want {
            let h = have.get(field).unwrap_or(&Value::Null);
            if h != w {
                return Err(ModelError::ConfigMismatch { field: field.clone(), expected: render(w), found: render(h) });
            }
        }
        Ok(())
    }

    /// Rebuilds the model, optionally requiring a specific configuration.
    pub fn to_model(&self, expected: Option<&ModelConfig>) -> Result<Model, ModelError> {
        if let Some(expected) = expected {
            self.check_config(expected)?;
        }
        let specs = param_specs(&self.config, InitOptions::default());
        let mut store = ParameterStore::from_specs(&specs, self.param_seed)?;
        for spec in &specs {
            let t = self
                .tensor(&spec.name)
                .ok_or_else(|| ModelError::ParameterMismatch(format!("checkpoint lacks {}", spec.name)))?;
            store.set(&spec.name, t.clone()).map_err(|e| ModelError::ParameterMismatch(e.to_string()))?;
        }
        Model::from_parts(self.config.clone(), store)
    }

    pub fn encode(&self) -> Result<Vec<u8>, ModelError> {
        let header = Header {
            model: self.config.clone(),
            param_seed: self.param_seed,
            tensors: self.tensors.iter().map(|(n, t)| Entry { name: n.clone(), shape: t.shape().to_vec() }).collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(9 + json.len() + payload);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(ModelError::BadMagic(bytes.iter().take(4).copied().collect()));
        }
        let version = *bytes.get(4).ok_or_else(|| ModelError::Corrupt("missing version byte".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let len: [u8; 4] = bytes
            .get(5..9)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| ModelError::Corrupt("missing header length".into()))?;
        let len = u32::from_le_bytes(len) as usize;
        let json = bytes.get(9..9 + len).ok_or_else(|| ModelError::Corrupt("header runs past end of file".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let mut payload = &bytes[9 + len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < n * 8 {
                return Err(ModelError::Corrupt(format!("payload truncated inside {}", entry.name)));
            }
            let data = payload[..n * 8].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8"))).collect();
            payload = &payload[n * 8..];
            tensors.push((entry.name, Tensor::from_vec(&entry.shape, data)?));
        }
        if !payload.is_empty() {
            return Err(ModelError::Corrupt(format!("{} trailing payload bytes", payload.len())));
        }
        Ok(Self { config: header.model, param_seed: header.param_seed, tensors, meta: header.meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| io_err(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
        Self::decode(&bytes)
    }
}
