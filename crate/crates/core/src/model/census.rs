//! Parameter accounting by group.
//!
//! [`count_parameters`] is closed-form arithmetic on the configuration;
//! [`census_of_specs`] classifies the concrete parameter list by name. The two
//! are independent and must agree exactly.

use serde::{Deserialize, Serialize};

use super::{param_specs, InitOptions, ModelConfig};
use crate::numerics::ParamSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCensus {
    pub embeddings: usize,
    pub aggregation: usize,
    pub spatial_blocks: usize,
    pub mixing_blocks: usize,
    pub head: usize,
    pub total: usize,
}

impl ParameterCensus {
    pub fn millions(&self) -> f64 {
        self.total as f64 / 1e6
    }

    /// `(group, count)` pairs in display order.
    pub fn groups(&self) -> [(&'static str, usize); 5] {
        [
            ("embeddings", self.embeddings),
            ("aggregation", self.aggregation),
            ("spatial_blocks", self.spatial_blocks),
            ("mixing_blocks", self.mixing_blocks),
            ("head", self.head),
        ]
    }
}

fn block(d: usize, ratio: usize) -> usize {
    (4 + 2 * ratio) * d * d + (9 + ratio) * d
}

pub fn count_parameters(config: &ModelConfig) -> ParameterCensus {
    let v = config.num_variables;
    let p2 = config.patch_size * config.patch_size;
    let width = config.token_width();
    let dr = config.stream_width();
    let r = config.num_representatives;
    let embeddings = v * p2 * width + 2 * v * width + config.num_tokens() * width;
    let aggregation = r * (dr + 2 * dr * dr);
    let stacks = if config.share_spatial_weights { 1 } else { r };
    let spatial_blocks = stacks * config.num_blocks * block(dr, config.mlp_ratio);
    let mixing_blocks = config.num_mixing_blocks() * block(dr, config.mlp_ratio);
    let out = config.output_variables * p2;
    let head = 2 * width
        + if config.head_depth == 0 {
            width * out + out
        } else {
            let hh = config.head_hidden;
            (width * hh + hh) + (config.head_depth - 1) * (hh * hh + hh) + hh * out + out
        };
    ParameterCensus {
        embeddings,
        aggregation,
        spatial_blocks,
        mixing_blocks,
        head,
        total: embeddings + aggregation + spatial_blocks + mixing_blocks + head,
    }
}

/// Census by walking a parameter list and classifying each name.
pub fn census_of_specs<'a>(params: impl IntoIterator<Item = (&'a str, usize)>) -> ParameterCensus {
    let mut c = ParameterCensus::default();
    for (name, n) in params {
        let group = if name.starts_with("embed.") {
            &mut c.embeddings
        } else if name.starts_with("aggregate.") {
            &mut c.aggregation
        } else if name.starts_with("spatial.") || name.starts_with("stream.") {
            &mut c.spatial_blocks
        } else if name.starts_with("mixing.") {
            &mut c.mixing_blocks
        } else {
            &mut c.head
        };
        *group += n;
        c.total += n;
    }
    c
}

/// Census of the parameter list a configuration would construct, without
/// allocating any tensor.
pub fn census_of_config(config: &ModelConfig) -> ParameterCensus {
    let specs: Vec<ParamSpec> = param_specs(config, InitOptions::default());
    census_of_specs(specs.iter().map(|s| (s.name.as_str(), s.numel())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;
    use crate::presets::Preset;

    #[test]
    fn closed_form_matches_walk_for_every_preset() {
        for preset in Preset::ALL {
            let mut c = preset.model_config();
            assert_eq!(count_parameters(&c), census_of_config(&c), "{preset:?}");
            c.share_spatial_weights = true;
            assert_eq!(count_parameters(&c), census_of_config(&c), "{preset:?} shared");
            c.head_depth = 0;
            assert_eq!(count_parameters(&c), census_of_config(&c), "{preset:?} headless");
        }
    }

    #[test]
    fn matches_constructed_store() {
        let c = Preset::DeskTiny.model_config();
        let model = Model::new(c.clone(), 1).unwrap();
        let walked = census_of_specs(model.params.iter().map(|(n, t)| (n, t.len())));
        assert_eq!(walked, count_parameters(&c));
        assert_eq!(model.params.total_count(), count_parameters(&c).total);
    }

    #[test]
    fn hand_counted_toy() {
        // p = H = W = 1, one variable, D = 1, one block of width 1, no head layers.
        let c = ModelConfig {
            image_size: [1, 1],
            patch_size: 1,
            embed_dim: 1,
            num_representatives: 1,
            stream_dim: None,
            num_blocks: 1,
            heads: 1,
            mlp_ratio: 1,
            mixing_interval: 0,
            share_spatial_weights: false,
            head_depth: 0,
            head_hidden: 0,
            drop_rate: 0.0,
            drop_path: 0.0,
            num_variables: 1,
            output_variables: 1,
        };
        let n = count_parameters(&c);
        assert_eq!(n.embeddings, 4);
        assert_eq!(n.aggregation, 3);
        // norms 4, qkv 3+3, proj 1+1, fc1 1+1, fc2 1+1
        assert_eq!(n.spatial_blocks, 16);
        // norm 2, output linear in*out + out = 2
        assert_eq!(n.head, 4);
        assert_eq!(n.total, 27);
    }
}
