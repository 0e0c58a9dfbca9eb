use ndarray::ArrayView3;

use super::layout::spatial_prefix;
use super::{param_specs, InitOptions, ModelConfig, ModelError};
use crate::exec::Execution;
use crate::griddata::{GridError, Region};
use crate::numerics::gradcheck::{central_differences, compare, Coord, GradCheckReport, DEFAULT_TOLERANCE};
use crate::numerics::{
    gelu_mlp, multi_head_self_attention, AttentionParams, Graph, MlpParams, Mode, NodeId, ParameterStore, Tensor,
    LAYER_NORM_EPS,
};

/// Configuration plus the parameters it induces.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

/// Every parameter of a store recorded on one graph, looked up by name.
pub struct Bound<'s> {
    store: &'s ParameterStore,
    ids: Vec<NodeId>,
}

impl<'s> Bound<'s> {
    pub fn new(g: &mut Graph<'s>, store: &'s ParameterStore) -> Self {
        let ids = store.tensors().enumerate().map(|(slot, t)| g.param(t, slot)).collect();
        Self { store, ids }
    }

    pub fn get(&self, name: &str) -> Result<NodeId, ModelError> {
        self.store
            .slot(name)
            .map(|s| self.ids[s])
            .ok_or_else(|| ModelError::ParameterMismatch(format!("missing parameter {name}")))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EmbeddingParams {
    /// `[V, p^2, width]`
    pub patch_weight: NodeId,
    /// `[V, width]`
    pub patch_bias: NodeId,
    /// `[V, width]`
    pub variable: NodeId,
    /// `[N, width]` over the full grid.
    pub position: NodeId,
}

impl EmbeddingParams {
    pub fn bind(b: &Bound<'_>) -> Result<Self, ModelError> {
        Ok(Self {
            patch_weight: b.get("embed.patch.weight")?,
            patch_bias: b.get("embed.patch.bias")?,
            variable: b.get("embed.variable")?,
            position: b.get("embed.position")?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AggregationParams {
    pub query: NodeId,
    pub key: NodeId,
    pub value: NodeId,
}

impl AggregationParams {
    pub fn bind(b: &Bound<'_>, stream: usize) -> Result<Self, ModelError> {
        Ok(Self {
            query: b.get(&format!("aggregate.{stream}.query"))?,
            key: b.get(&format!("aggregate.{stream}.key"))?,
            value: b.get(&format!("aggregate.{stream}.value"))?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub norm1_gain: NodeId,
    pub norm1_bias: NodeId,
    pub attn: AttentionParams,
    pub norm2_gain: NodeId,
    pub norm2_bias: NodeId,
    pub mlp: MlpParams,
}

impl BlockParams {
    pub fn bind(b: &Bound<'_>, prefix: &str) -> Result<Self, ModelError> {
        let p = |s: &str| b.get(&format!("{prefix}.{s}"));
        Ok(Self {
            norm1_gain: p("norm1.gain")?,
            norm1_bias: p("norm1.bias")?,
            attn: AttentionParams {
                qkv_w: p("attn.qkv.weight")?,
                qkv_b: p("attn.qkv.bias")?,
                proj_w: p("attn.proj.weight")?,
                proj_b: p("attn.proj.bias")?,
            },
            norm2_gain: p("norm2.gain")?,
            norm2_bias: p("norm2.bias")?,
            mlp: MlpParams {
                fc1_w: p("mlp.fc1.weight")?,
                fc1_b: p("mlp.fc1.bias")?,
                fc2_w: p("mlp.fc2.weight")?,
                fc2_b: p("mlp.fc2.bias")?,
            },
        })
    }
}

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub norm_gain: NodeId,
    pub norm_bias: NodeId,
    /// `(weight, bias)` per hidden layer.
    pub hidden: Vec<(NodeId, NodeId)>,
    pub out_weight: NodeId,
    pub out_bias: NodeId,
}

impl HeadParams {
    pub fn bind(b: &Bound<'_>, depth: usize) -> Result<Self, ModelError> {
        Ok(Self {
            norm_gain: b.get("head.norm.gain")?,
            norm_bias: b.get("head.norm.bias")?,
            hidden: (0..depth)
                .map(|i| Ok((b.get(&format!("head.hidden.{i}.weight"))?, b.get(&format!("head.hidden.{i}.bias"))?)))
                .collect::<Result<_, ModelError>>()?,
            out_weight: b.get("head.out.weight")?,
            out_bias: b.get("head.out.bias")?,
        })
    }
}

/// Node handles produced by [`Model::forward`].
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[V_out, h, w]` over the input region.
    pub prediction: NodeId,
    /// Per-stream aggregation outputs `[n, d_r]`; the graph caches their
    /// attention weights.
    pub aggregated: Vec<NodeId>,
    /// Per-stream encoder outputs `[n, d_r]`.
    pub encoded: Vec<NodeId>,
}

fn indivisible(h: usize, w: usize, p: usize) -> ModelError {
    ModelError::Grid(GridError::IndivisibleGrid { height: h, width: w, split: 1, patch: p })
}

/// `[V, H, W]` to `[N, V, p^2]` with tokens in row-major patch order and each
/// patch flattened row-major.
pub fn patchify(field: ArrayView3<'_, f64>, p: usize) -> Result<Tensor, ModelError> {
    let (v, h, w) = field.dim();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(indivisible(h, w, p));
    }
    let (rows, cols) = (h / p, w / p);
    let mut data = Vec::with_capacity(v * h * w);
    for pr in 0..rows {
        for pc in 0..cols {
            for var in 0..v {
                for i in 0..p {
                    for j in 0..p {
                        data.push(field[[var, pr * p + i, pc * p + j]]);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[rows * cols, v, p * p], data)?)
}

/// For each element of a `[c, h, w]` field, its flat index in a token tensor
/// `[N, c * p^2]` laid out as [`patchify`] would produce (variables outer,
/// patch pixels inner).
pub fn unpatchify_indices(c: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let cols = w / p;
    let per_token = c * p * p;
    let mut out = Vec::with_capacity(c * h * w);
    for v in 0..c {
        for y in 0..h {
            for x in 0..w {
                let token = (y / p) * cols + x / p;
                out.push(token * per_token + v * p * p + (y % p) * p + x % p);
            }
        }
    }
    out
}

/// Inverse of [`patchify`] for a token tensor `[N, c * p^2]`.
pub fn unpatchify(tokens: &Tensor, c: usize, h: usize, w: usize, p: usize) -> Result<Tensor, ModelError> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(indivisible(h, w, p));
    }
    if tokens.len() != c * h * w {
        return Err(ModelError::ShapeMismatch(format!("{:?} tokens for a {c}x{h}x{w} field", tokens.shape())));
    }
    let data = unpatchify_indices(c, h, w, p).into_iter().map(|i| tokens.data()[i]).collect();
    Ok(Tensor::from_vec(&[c, h, w], data)?)
}

/// Full-grid token index of every token of `region`, row-major.
pub(crate) fn token_positions(config: &ModelConfig, region: &Region) -> Vec<usize> {
    let p = config.patch_size;
    let grid_cols = config.image_size[1] / p;
    let (r0, c0) = (region.row_off / p, region.col_off / p);
    let mut out = Vec::with_capacity(region.cells() / (p * p));
    for pr in 0..region.height / p {
        for pc in 0..region.width / p {
            out.push((r0 + pr) * grid_cols + c0 + pc);
        }
    }
    out
}

/// Per-variable patch embedding plus variable and positional embeddings.
/// `positions` holds the full-grid token index of each of the `n` tokens.
pub fn embed_variables(
    g: &mut Graph<'_>,
    patches: NodeId,
    params: &EmbeddingParams,
    positions: &[usize],
    drop_rate: f64,
) -> Result<NodeId, ModelError> {
    let shape = g.value(patches).shape().to_vec();
    let expected = g.value(params.variable).shape()[0];
    if shape.len() != 3 || shape[1] != expected {
        return Err(ModelError::VariableCountMismatch { expected, got: shape.get(1).copied().unwrap_or(0) });
    }
    let (n, vars) = (shape[0], shape[1]);
    if positions.len() != n {
        return Err(ModelError::ShapeMismatch(format!("{} positions for {n} tokens", positions.len())));
    }
    let width = g.value(params.variable).last_dim();
    let x = g.var_linear(patches, params.patch_weight, params.patch_bias)?;
    let x = g.add_broadcast_leading(x, params.variable)?;
    let rows: Vec<usize> = positions.iter().flat_map(|&t| t * width..(t + 1) * width).collect();
    let pos = g.gather(params.position, rows, &[n, width])?;
    let x = g.add_broadcast_middle(x, pos, vars)?;
    Ok(g.dropout(x, drop_rate)?)
}

/// Contiguous equal slices of the trailing axis.
pub fn split_streams(g: &mut Graph<'_>, tokens: NodeId, r: usize) -> Result<Vec<NodeId>, ModelError> {
    let width = g.value(tokens).last_dim();
    if r == 0 || !width.is_multiple_of(r) {
        return Err(ModelError::ShapeMismatch(format!("width {width} does not split into {r} streams")));
    }
    if r == 1 {
        return Ok(vec![tokens]);
    }
    let d = width / r;
    (0..r).map(|k| Ok(g.slice_cols(tokens, k * d, (k + 1) * d)?)).collect()
}

/// Single-query cross-attention over the variable axis of `stream: [n, V, d]`
/// at every token position, scaled by `1/sqrt(d)`. Returns `[n, d]`.
pub fn aggregate_variables(
    g: &mut Graph<'_>,
    stream: NodeId,
    params: &AggregationParams,
) -> Result<NodeId, ModelError> {
    let shape = g.value(stream).shape().to_vec();
    if shape.len() != 3 {
        return Err(ModelError::ShapeMismatch(format!("aggregation input {shape:?} is not [n, V, d]")));
    }
    let (n, vars, d) = (shape[0], shape[1], shape[2]);
    let keys = g.linear(stream, params.key, None)?;
    let values = g.linear(stream, params.value, None)?;
    Ok(g.query_attention(params.query, keys, values, n, vars, 1.0 / (d as f64).sqrt())?)
}

/// Pre-norm encoder layer over `x: [batch * seq, d]`, attention restricted to
/// each run of `seq` rows.
#[allow(clippy::too_many_arguments)]
pub fn spatial_block(
    g: &mut Graph<'_>,
    x: NodeId,
    params: &BlockParams,
    heads: usize,
    batch: usize,
    seq: usize,
    drop_rate: f64,
    drop_path: f64,
) -> Result<NodeId, ModelError> {
    let h = g.layer_norm(x, params.norm1_gain, params.norm1_bias, LAYER_NORM_EPS)?;
    let a = multi_head_self_attention(g, h, &params.attn, heads, batch, seq)?;
    let a = g.dropout(a, drop_rate)?;
    let a = g.drop_path(a, drop_path)?;
    let x = g.add(x, a)?;
    let h = g.layer_norm(x, params.norm2_gain, params.norm2_bias, LAYER_NORM_EPS)?;
    let m = gelu_mlp(g, h, &params.mlp, drop_rate)?;
    let m = g.drop_path(m, drop_path)?;
    Ok(g.add(x, m)?)
}

/// One encoder layer over the `R` stream vectors at each token position.
pub fn mixing_block(
    g: &mut Graph<'_>,
    streams: &[NodeId],
    params: &BlockParams,
    heads: usize,
    drop_rate: f64,
    drop_path: f64,
) -> Result<Vec<NodeId>, ModelError> {
    let r = streams.len();
    let first = g.value(streams[0]).shape().to_vec();
    let (n, d) = (first[0], first[1]);
    let joined = if r == 1 { streams[0] } else { g.concat_cols(streams)? };
    let seqs = g.reshape(joined, &[n * r, d])?;
    let mixed = spatial_block(g, seqs, params, heads, n, r, drop_rate, drop_path)?;
    let back = g.reshape(mixed, &[n, r * d])?;
    split_streams(g, back, r)
}

/// `num_blocks` spatial passes per stream with a mixing pass after every
/// `mixing_interval`-th one.
pub fn encoder_forward(
    g: &mut Graph<'_>,
    mut streams: Vec<NodeId>,
    bound: &Bound<'_>,
    config: &ModelConfig,
) -> Result<Vec<NodeId>, ModelError> {
    let n = g.value(streams[0]).shape()[0];
    for b in 0..config.num_blocks {
        for (k, s) in streams.iter_mut().enumerate() {
            let params = BlockParams::bind(bound, &spatial_prefix(config, k, b))?;
            *s = spatial_block(g, *s, &params, config.heads, 1, n, config.drop_rate, config.drop_path)?;
        }
        if config.mixes_after(b) {
            let params = BlockParams::bind(bound, &format!("mixing.{}", (b + 1) / config.mixing_interval - 1))?;
            streams = mixing_block(g, &streams, &params, config.heads, config.drop_rate, config.drop_path)?;
        }
    }
    Ok(streams)
}

/// Concatenates streams per token, applies the MLP head and reassembles the
/// `[c, h, w]` field.
pub fn prediction_head(
    g: &mut Graph<'_>,
    streams: &[NodeId],
    params: &HeadParams,
    c: usize,
    (h, w): (usize, usize),
    p: usize,
) -> Result<NodeId, ModelError> {
    let mut x = if streams.len() == 1 { streams[0] } else { g.concat_cols(streams)? };
    let n = g.value(x).shape()[0];
    if n * p * p != h * w {
        return Err(ModelError::ShapeMismatch(format!("{n} tokens for a {h}x{w} region with patch {p}")));
    }
    x = g.layer_norm(x, params.norm_gain, params.norm_bias, LAYER_NORM_EPS)?;
    for &(wt, b) in &params.hidden {
        x = g.linear(x, wt, Some(b))?;
        x = g.gelu(x);
    }
    let out = g.linear(x, params.out_weight, Some(params.out_bias))?;
    if g.value(out).last_dim() != c * p * p {
        return Err(ModelError::ShapeMismatch(format!("head width {} for {c} outputs", g.value(out).last_dim())));
    }
    Ok(g.gather(out, unpatchify_indices(c, h, w, p), &[c, h, w])?)
}

fn to_tensor(field: ArrayView3<'_, f64>) -> Tensor {
    let (a, b, c) = field.dim();
    Tensor::from_vec(&[a, b, c], field.iter().copied().collect()).expect("sized")
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Self::with_init(config, seed, InitOptions::default())
    }

    pub fn with_init(config: ModelConfig, seed: u64, init: InitOptions) -> Result<Self, ModelError> {
        config.validate()?;
        let params = ParameterStore::from_specs(&param_specs(&config, init), seed)?;
        Ok(Self { config, params })
    }

    /// Pairs a configuration with existing parameters, checking that names and
    /// shapes are exactly the ones the configuration induces.
    pub fn from_parts(config: ModelConfig, params: ParameterStore) -> Result<Self, ModelError> {
        config.validate()?;
        let specs = param_specs(&config, InitOptions::default());
        if specs.len() != params.len() {
            return Err(ModelError::ParameterMismatch(format!(
                "{} parameters for a config that needs {}",
                params.len(),
                specs.len()
            )));
        }
        for (spec, (name, t)) in specs.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(ModelError::ParameterMismatch(format!(
                    "expected {} {:?}, found {name} {:?}",
                    spec.name,
                    spec.shape,
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    fn check_region(&self, input: ArrayView3<'_, f64>, region: &Region) -> Result<(), ModelError> {
        let [h, w] = self.config.image_size;
        region.validate(h, w, self.config.patch_size)?;
        let (v, rh, rw) = input.dim();
        if v != self.config.num_variables {
            return Err(ModelError::VariableCountMismatch { expected: self.config.num_variables, got: v });
        }
        if (rh, rw) != (region.height, region.width) {
            return Err(ModelError::ShapeMismatch(format!("input {rh}x{rw} for region {region:?}")));
        }
        Ok(())
    }

    /// Records a forward pass over `input: [V, h, w]`, the contents of
    /// `region` of the full grid.
    pub fn forward<'p>(
        &'p self,
        g: &mut Graph<'p>,
        input: ArrayView3<'_, f64>,
        region: &Region,
    ) -> Result<Forward, ModelError> {
        self.check_region(input, region)?;
        let c = &self.config;
        let bound = Bound::new(g, &self.params);
        let patches = g.input(patchify(input, c.patch_size)?);
        let emb = EmbeddingParams::bind(&bound)?;
        let tokens = embed_variables(g, patches, &emb, &token_positions(c, region), c.drop_rate)?;
        let split = split_streams(g, tokens, c.num_representatives)?;
        let aggregated = split
            .iter()
            .enumerate()
            .map(|(k, &s)| aggregate_variables(g, s, &AggregationParams::bind(&bound, k)?))
            .collect::<Result<Vec<_>, _>>()?;
        let encoded = encoder_forward(g, aggregated.clone(), &bound, c)?;
        let head = HeadParams::bind(&bound, c.head_depth)?;
        let prediction =
            prediction_head(g, &encoded, &head, c.output_variables, (region.height, region.width), c.patch_size)?;
        Ok(Forward { prediction, aggregated, encoded })
    }

    /// Deterministic eval-mode forecast `[V_out, h, w]` for `region`.
    pub fn predict(&self, input: ArrayView3<'_, f64>, region: &Region) -> Result<Tensor, ModelError> {
        let mut g = Graph::new(Mode::Eval, 0);
        let out = self.forward(&mut g, input, region)?;
        Ok(g.value(out.prediction).clone())
    }

    /// Latitude-weighted MSE against `target` and its gradient for every
    /// parameter slot. `lat_weights` covers the rows of `region`.
    pub fn loss_and_gradients(
        &self,
        input: ArrayView3<'_, f64>,
        target: ArrayView3<'_, f64>,
        region: &Region,
        lat_weights: &[f64],
        mode: Mode,
        seed: u64,
    ) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut g = Graph::new(mode, seed);
        let out = self.forward(&mut g, input, region)?;
        let loss = g.lat_mse(out.prediction, to_tensor(target), lat_weights.to_vec())?;
        let value = g.value(loss).data()[0];
        let grads = g.backward(loss)?.into_slots(&self.params.shapes());
        Ok((value, grads))
    }

    /// Loss only, without a backward pass.
    pub fn loss(
        &self,
        input: ArrayView3<'_, f64>,
        target: ArrayView3<'_, f64>,
        region: &Region,
        lat_weights: &[f64],
        mode: Mode,
        seed: u64,
    ) -> Result<f64, ModelError> {
        let mut g = Graph::new(mode, seed);
        let out = self.forward(&mut g, input, region)?;
        let loss = g.lat_mse(out.prediction, to_tensor(target), lat_weights.to_vec())?;
        Ok(g.value(loss).data()[0])
    }

    /// Compares analytic eval-mode loss gradients against central differences
    /// at the given parameter coordinates (`Coord::tensor` is a store slot).
    #[allow(clippy::too_many_arguments)]
    pub fn grad_check(
        &self,
        input: ArrayView3<'_, f64>,
        target: ArrayView3<'_, f64>,
        region: &Region,
        lat_weights: &[f64],
        coords: &[Coord],
        eps: f64,
        exec: Execution,
    ) -> Result<GradCheckReport, ModelError> {
        let (_, grads) = self.loss_and_gradients(input, target, region, lat_weights, Mode::Eval, 0)?;
        let analytic: Vec<f64> = coords.iter().map(|c| grads[c.tensor].data()[c.index]).collect();
        let numeric = central_differences(coords, eps, exec, |c, delta| {
            let mut shifted = self.clone();
            shifted.params.tensors_mut().nth(c.tensor).expect("slot").data_mut()[c.index] += delta;
            shifted.loss(input, target, region, lat_weights, Mode::Eval, 0).expect("validated by the analytic pass")
        });
        Ok(compare(coords, &analytic, &numeric, self.params.len(), DEFAULT_TOLERANCE))
    }
}

#[cfg(test)]
#[path = "forward_tests.rs"]
mod tests;
