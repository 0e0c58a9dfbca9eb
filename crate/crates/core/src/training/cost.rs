use serde::{Deserialize, Serialize};

use crate::griddata::{canonical_crops, GridError, Region};
use crate::model::ModelConfig;

/// Running totals of the work done by training forwards.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub parameters: usize,
    pub forwards: u64,
    pub tokens: u64,
    /// Sum over forwards of `n^2`: attention-score entries of one spatial
    /// layer, independent of the head count.
    pub attention_entries_per_layer: u64,
    /// All spatial layers of all streams: `attention_entries_per_layer * B * R`.
    pub spatial_attention_entries: u64,
    /// Mixing layers: `n * R^2` per mixing block per forward.
    pub mixing_attention_entries: u64,
    pub cells: u64,
}

impl CostLedger {
    pub fn new(parameters: usize) -> Self {
        Self { parameters, ..Default::default() }
    }

    pub fn record(&mut self, config: &ModelConfig, region: &Region) {
        let n = (region.cells() / (config.patch_size * config.patch_size)) as u64;
        let r = config.num_representatives as u64;
        self.forwards += 1;
        self.tokens += n;
        self.attention_entries_per_layer += n * n;
        self.spatial_attention_entries += n * n * config.num_blocks as u64 * r;
        self.mixing_attention_entries += n * r * r * config.num_mixing_blocks() as u64;
        self.cells += region.cells() as u64;
    }
}

/// Per-sample attention cost of one split factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCost {
    pub split: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub crops: usize,
    pub tokens_per_crop: usize,
    /// `tokens_per_crop^2` for one spatial layer.
    pub entries_per_crop: u64,
    /// Summed over all crops of one sample.
    pub entries_total: u64,
}

impl SplitCost {
    /// `entries_total` of this split relative to the global (S = 1) count.
    pub fn ratio_to(&self, global: &SplitCost) -> f64 {
        self.entries_total as f64 / global.entries_total as f64
    }
}

pub fn split_cost(config: &ModelConfig, split: usize) -> Result<SplitCost, GridError> {
    let [h, w] = config.image_size;
    let p = config.patch_size;
    let crops = canonical_crops(h, w, split, p)?;
    let first = crops[0];
    let tokens = first.cells() / (p * p);
    let per = (tokens * tokens) as u64;
    Ok(SplitCost {
        split,
        crop_height: first.height,
        crop_width: first.width,
        crops: crops.len(),
        tokens_per_crop: tokens,
        entries_per_crop: per,
        entries_total: per * crops.len() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::Preset;

    #[test]
    fn paper_grid_split_law() {
        let c = Preset::PaperR2.model_config();
        let global = split_cost(&c, 1).unwrap();
        assert_eq!((global.tokens_per_crop, global.entries_total), (512, 512 * 512));
        for (s, tokens, hw) in [(2, 128, (16, 32)), (4, 32, (8, 16)), (8, 8, (4, 8))] {
            let cost = split_cost(&c, s).unwrap();
            assert_eq!(cost.tokens_per_crop, tokens);
            assert_eq!((cost.crop_height, cost.crop_width), hw);
            assert_eq!(cost.entries_total * (s * s) as u64, global.entries_total);
            assert_eq!(cost.ratio_to(&global), 1.0 / (s * s) as f64);
        }
        assert_eq!(split_cost(&c, 2).unwrap().entries_per_crop, 16384);
        assert_eq!(split_cost(&c, 2).unwrap().entries_total, 65536);
        assert!(split_cost(&c, 3).is_err());
    }

    #[test]
    fn ledger_counts() {
        let c = Preset::PaperR2.model_config();
        let mut l = CostLedger::new(7);
        for r in canonical_crops(32, 64, 2, 2).unwrap() {
            l.record(&c, &r);
        }
        assert_eq!((l.forwards, l.tokens, l.attention_entries_per_layer, l.cells), (4, 512, 65536, 2048));
        assert_eq!(l.spatial_attention_entries, 65536 * 8 * 2);
        assert_eq!(l.mixing_attention_entries, 512 * 4 * 2);
    }
}
