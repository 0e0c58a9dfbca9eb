//! Run configuration files: a preset name plus partial overrides of its model
//! and training settings.
//!
//! ```json
//! { "preset": "desk-tiny", "model": { "embed_dim": 64 }, "train": { "epochs": 5 } }
//! ```
//!
//! Without a preset, `model` and `train` must be complete.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{ModelConfig, ModelError};
use crate::presets::{Preset, UnknownPreset};
use crate::training::{TrainError, TrainPlan};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Syntax(String),
    #[error(transparent)]
    Preset(#[from] UnknownPreset),
    #[error("{section}: {message}")]
    Section { section: &'static str, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub model: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub train: Map<String, Value>,
}

/// A fully expanded configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolved {
    pub model: ModelConfig,
    pub train: TrainPlan,
}

fn overlay<T>(section: &'static str, base: Option<T>, patch: &Map<String, Value>) -> Result<T, ConfigError>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let mut merged = match base {
        Some(b) => match serde_json::to_value(b) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config sections serialize to objects"),
        },
        None => Map::new(),
    };
    for (k, v) in patch {
        merged.insert(k.clone(), v.clone());
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| ConfigError::Section { section, message: e.to_string() })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    pub fn from_preset(preset: Preset) -> Self {
        Self { preset: Some(preset.name().to_string()), ..Default::default() }
    }

    pub fn preset(&self) -> Result<Option<Preset>, ConfigError> {
        Ok(self.preset.as_deref().map(str::parse).transpose()?)
    }

    /// Expands the preset, applies overrides and validates both sections.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let preset = self.preset()?;
        let model: ModelConfig = overlay("model", preset.map(Preset::model_config), &self.model)?;
        let train: TrainPlan = overlay("train", preset.map(Preset::train_plan), &self.train)?;
        model.validate()?;
        train.validate()?;
        Ok(Resolved { model, train })
    }
}
