//! Names, shapes and initializers of every trainable tensor.

use super::ModelConfig;
use crate::numerics::{Init, ParamSpec};

pub const WEIGHT_STD: f64 = 0.02;

/// Initialization switches beyond the default truncated-normal scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct InitOptions {
    /// Zero the attention output projection and second MLP layer of every
    /// encoder block, making each block the identity at initialization.
    pub zero_residual_branches: bool,
}

fn weight(name: String, shape: &[usize]) -> ParamSpec {
    ParamSpec::new(name, shape, Init::TruncNormal { std: WEIGHT_STD })
}

fn zeros(name: String, shape: &[usize]) -> ParamSpec {
    ParamSpec::new(name, shape, Init::Zeros)
}

fn ones(name: String, shape: &[usize]) -> ParamSpec {
    ParamSpec::new(name, shape, Init::Ones)
}

/// One pre-norm encoder block of width `d` under `prefix`.
pub fn block_specs(prefix: &str, d: usize, mlp_ratio: usize, init: InitOptions) -> Vec<ParamSpec> {
    let hidden = mlp_ratio * d;
    let residual = |name: String, shape: &[usize]| {
        if init.zero_residual_branches {
            zeros(name, shape)
        } else {
            weight(name, shape)
        }
    };
    vec![
        ones(format!("{prefix}.norm1.gain"), &[d]),
        zeros(format!("{prefix}.norm1.bias"), &[d]),
        weight(format!("{prefix}.attn.qkv.weight"), &[d, 3 * d]),
        zeros(format!("{prefix}.attn.qkv.bias"), &[3 * d]),
        residual(format!("{prefix}.attn.proj.weight"), &[d, d]),
        zeros(format!("{prefix}.attn.proj.bias"), &[d]),
        ones(format!("{prefix}.norm2.gain"), &[d]),
        zeros(format!("{prefix}.norm2.bias"), &[d]),
        weight(format!("{prefix}.mlp.fc1.weight"), &[d, hidden]),
        zeros(format!("{prefix}.mlp.fc1.bias"), &[hidden]),
        residual(format!("{prefix}.mlp.fc2.weight"), &[hidden, d]),
        zeros(format!("{prefix}.mlp.fc2.bias"), &[d]),
    ]
}

/// Prefix of spatial block `block` of stream `stream`.
pub(crate) fn spatial_prefix(config: &ModelConfig, stream: usize, block: usize) -> String {
    if config.share_spatial_weights {
        format!("spatial.{block}")
    } else {
        format!("stream.{stream}.spatial.{block}")
    }
}

/// Every parameter the configuration induces, in store order.
pub fn param_specs(config: &ModelConfig, init: InitOptions) -> Vec<ParamSpec> {
    let v = config.num_variables;
    let p2 = config.patch_size * config.patch_size;
    let width = config.token_width();
    let dr = config.stream_width();
    let mut specs = vec![
        weight("embed.patch.weight".into(), &[v, p2, width]),
        zeros("embed.patch.bias".into(), &[v, width]),
        weight("embed.variable".into(), &[v, width]),
        weight("embed.position".into(), &[config.num_tokens(), width]),
    ];
    for k in 0..config.num_representatives {
        specs.push(weight(format!("aggregate.{k}.query"), &[dr]));
        specs.push(weight(format!("aggregate.{k}.key"), &[dr, dr]));
        specs.push(weight(format!("aggregate.{k}.value"), &[dr, dr]));
    }
    let stacks = if config.share_spatial_weights { 1 } else { config.num_representatives };
    for k in 0..stacks {
        for b in 0..config.num_blocks {
            specs.extend(block_specs(&spatial_prefix(config, k, b), dr, config.mlp_ratio, init));
        }
    }
    for m in 0..config.num_mixing_blocks() {
        specs.extend(block_specs(&format!("mixing.{m}"), dr, config.mlp_ratio, init));
    }
    specs.push(ones("head.norm.gain".into(), &[width]));
    specs.push(zeros("head.norm.bias".into(), &[width]));
    let mut input = width;
    for i in 0..config.head_depth {
        specs.push(weight(format!("head.hidden.{i}.weight"), &[input, config.head_hidden]));
        specs.push(zeros(format!("head.hidden.{i}.bias"), &[config.head_hidden]));
        input = config.head_hidden;
    }
    let out = config.output_variables * p2;
    specs.push(weight("head.out.weight".into(), &[input, out]));
    specs.push(zeros("head.out.bias".into(), &[out]));
    specs
}
