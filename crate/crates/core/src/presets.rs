//! Named configurations. The `paper-*` presets are the full-size models;
//! `desk-tiny` and `desk-tiny-r1` are sized for CPU training on synthetic data.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::model::ModelConfig;
use crate::training::{AdamWConfig, CropMode, TrainPlan};

/// Variables in the default WeatherBench registry.
pub const WEATHERBENCH_VARIABLES: usize = 47;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Single representative with `D = 1024`, the single-aggregation baseline.
    PaperR1,
    PaperR2,
    PaperR4,
    /// Four representatives with the per-stream width doubled to 512.
    PaperR4Wide,
    DeskTiny,
    /// `desk-tiny` reduced to a single representative and no mixing.
    DeskTinyR1,
}

impl Preset {
    pub const ALL: [Preset; 6] =
        [Preset::PaperR1, Preset::PaperR2, Preset::PaperR4, Preset::PaperR4Wide, Preset::DeskTiny, Preset::DeskTinyR1];

    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperR1 => "paper-r1",
            Preset::PaperR2 => "paper-r2",
            Preset::PaperR4 => "paper-r4",
            Preset::PaperR4Wide => "paper-r4-wide",
            Preset::DeskTiny => "desk-tiny",
            Preset::DeskTinyR1 => "desk-tiny-r1",
        }
    }

    pub fn is_paper(self) -> bool {
        !matches!(self, Preset::DeskTiny | Preset::DeskTinyR1)
    }

    /// Published parameter count in millions, where one exists.
    pub fn reference_millions(self) -> Option<f64> {
        match self {
            Preset::PaperR1 => Some(108.08),
            Preset::PaperR2 => Some(59.86),
            Preset::PaperR4 => Some(20.76),
            Preset::PaperR4Wide => Some(80.47),
            Preset::DeskTiny | Preset::DeskTinyR1 => None,
        }
    }

    pub fn model_config(self) -> ModelConfig {
        let paper = ModelConfig {
            image_size: [32, 64],
            patch_size: 2,
            embed_dim: 1024,
            num_representatives: 2,
            stream_dim: None,
            num_blocks: 8,
            heads: 16,
            mlp_ratio: 4,
            mixing_interval: 4,
            share_spatial_weights: false,
            head_depth: 2,
            head_hidden: 1024,
            drop_rate: 0.1,
            drop_path: 0.1,
            num_variables: WEATHERBENCH_VARIABLES,
            output_variables: WEATHERBENCH_VARIABLES,
        };
        let desk = ModelConfig {
            image_size: [32, 64],
            patch_size: 4,
            embed_dim: 32,
            num_representatives: 2,
            stream_dim: None,
            num_blocks: 2,
            heads: 2,
            mlp_ratio: 2,
            mixing_interval: 1,
            share_spatial_weights: false,
            head_depth: 1,
            head_hidden: 64,
            drop_rate: 0.0,
            drop_path: 0.0,
            num_variables: 8,
            output_variables: 8,
        };
        match self {
            Preset::PaperR1 => ModelConfig { num_representatives: 1, mixing_interval: 0, ..paper },
            Preset::PaperR2 => paper,
            Preset::PaperR4 => ModelConfig { num_representatives: 4, ..paper },
            Preset::PaperR4Wide => ModelConfig { num_representatives: 4, embed_dim: 2048, ..paper },
            Preset::DeskTiny => desk,
            Preset::DeskTinyR1 => ModelConfig { num_representatives: 1, mixing_interval: 0, ..desk },
        }
    }

    /// Optimization defaults. Full-size presets use a long, low-rate
    /// schedule; desk presets train briefly at a larger rate.
    pub fn train_plan(self) -> TrainPlan {
        if self.is_paper() {
            TrainPlan {
                epochs: 50,
                warmup_epochs: 5,
                batch_size: 32,
                accumulation_steps: 4,
                split: 1,
                crop_mode: CropMode::Canonical,
                lead_time_hours: 6,
                seed: 0,
                lr_peak: 5e-7,
                optimizer: AdamWConfig::default(),
                execution: Execution::Parallel,
            }
        } else {
            TrainPlan {
                epochs: 20,
                warmup_epochs: 1,
                batch_size: 8,
                accumulation_steps: 1,
                split: 1,
                crop_mode: CropMode::Canonical,
                lead_time_hours: 6,
                seed: 0,
                lr_peak: 2e-3,
                optimizer: AdamWConfig::default(),
                execution: Execution::Parallel,
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
#[error("unknown preset {0:?} (expected one of paper-r1, paper-r2, paper-r4, paper-r4-wide, desk-tiny, desk-tiny-r1)")]
pub struct UnknownPreset(pub String);

impl FromStr for Preset {
    type Err = UnknownPreset;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| UnknownPreset(s.to_string()))
    }
}
