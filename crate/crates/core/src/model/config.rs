use serde::{Deserialize, Serialize};

use super::ModelError;

/// Full architecture description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Full grid `[H, W]`.
    pub image_size: [usize; 2],
    pub patch_size: usize,
    /// Width `D` of the per-variable token embedding before the split.
    pub embed_dim: usize,
    /// Number of representative variables `R`.
    pub num_representatives: usize,
    /// Per-stream width; `None` means `embed_dim / num_representatives`.
    #[serde(default)]
    pub stream_dim: Option<usize>,
    pub num_blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// A mixing block follows every `mixing_interval`-th spatial block; 0
    /// disables mixing entirely.
    pub mixing_interval: usize,
    /// One set of spatial-block weights used by every stream.
    #[serde(default)]
    pub share_spatial_weights: bool,
    pub head_depth: usize,
    pub head_hidden: usize,
    pub drop_rate: f64,
    pub drop_path: f64,
    pub num_variables: usize,
    pub output_variables: usize,
}

impl ModelConfig {
    pub fn stream_width(&self) -> usize {
        self.stream_dim.unwrap_or(self.embed_dim / self.num_representatives.max(1))
    }

    /// Embedding width actually produced: `R * d_r`.
    pub fn token_width(&self) -> usize {
        self.num_representatives * self.stream_width()
    }

    /// Patch grid `(H/p, W/p)`.
    pub fn patch_grid(&self) -> (usize, usize) {
        (self.image_size[0] / self.patch_size, self.image_size[1] / self.patch_size)
    }

    pub fn num_tokens(&self) -> usize {
        let (a, b) = self.patch_grid();
        a * b
    }

    pub fn num_mixing_blocks(&self) -> usize {
        self.num_blocks.checked_div(self.mixing_interval).unwrap_or(0)
    }

    /// Whether a mixing block runs after spatial block `block` (0-based).
    pub fn mixes_after(&self, block: usize) -> bool {
        self.mixing_interval > 0 && (block + 1).is_multiple_of(self.mixing_interval)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &'static str, reason: String| Err(ModelError::InvalidConfig { field, reason });
        let [h, w] = self.image_size;
        let p = self.patch_size;
        if p == 0 || h == 0 || w == 0 || h % p != 0 || w % p != 0 {
            return bad("image_size", format!("[{h}, {w}] must be positive multiples of patch_size {p}"));
        }
        if self.num_representatives == 0 {
            return bad("num_representatives", "must be at least 1".into());
        }
        match self.stream_dim {
            Some(0) => return bad("stream_dim", "must be positive".into()),
            None if !self.embed_dim.is_multiple_of(self.num_representatives) || self.embed_dim == 0 => {
                return bad(
                    "embed_dim",
                    format!(
                        "{} must be a positive multiple of num_representatives {}",
                        self.embed_dim, self.num_representatives
                    ),
                )
            }
            _ => {}
        }
        if self.heads == 0 || !self.stream_width().is_multiple_of(self.heads) {
            return bad("heads", format!("{} must divide the stream width {}", self.heads, self.stream_width()));
        }
        if self.num_blocks == 0 {
            return bad("num_blocks", "must be at least 1".into());
        }
        if self.mixing_interval > self.num_blocks {
            return bad("mixing_interval", format!("{} exceeds num_blocks {}", self.mixing_interval, self.num_blocks));
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio", "must be at least 1".into());
        }
        if self.head_depth > 0 && self.head_hidden == 0 {
            return bad("head_hidden", "must be positive when head_depth > 0".into());
        }
        for (field, rate) in [("drop_rate", self.drop_rate), ("drop_path", self.drop_path)] {
            if !(0.0..1.0).contains(&rate) {
                return bad(field, format!("{rate} outside [0, 1)"));
            }
        }
        if self.num_variables == 0 {
            return bad("num_variables", "must be at least 1".into());
        }
        if self.output_variables == 0 {
            return bad("output_variables", "must be at least 1".into());
        }
        Ok(())
    }
}
