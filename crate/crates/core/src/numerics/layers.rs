use super::{Graph, NodeId, NumericsError};

/// Node handles for one multi-head self-attention sublayer.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    /// Fused query/key/value projection, `[d, 3d]`.
    pub qkv_w: NodeId,
    pub qkv_b: NodeId,
    pub proj_w: NodeId,
    pub proj_b: NodeId,
}

#[derive(Clone, Copy, Debug)]
pub struct MlpParams {
    pub fc1_w: NodeId,
    pub fc1_b: NodeId,
    pub fc2_w: NodeId,
    pub fc2_b: NodeId,
}

/// Multi-head self-attention over `x: [batch * seq, d]`, each batch entry an
/// independent sequence of length `seq`.
pub fn multi_head_self_attention(
    g: &mut Graph<'_>,
    x: NodeId,
    params: &AttentionParams,
    heads: usize,
    batch: usize,
    seq: usize,
) -> Result<NodeId, NumericsError> {
    let d = g.value(x).last_dim();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(NumericsError::HeadDivisibility { dim: d, heads });
    }
    let qkv = g.linear(x, params.qkv_w, Some(params.qkv_b))?;
    let q = g.slice_cols(qkv, 0, d)?;
    let k = g.slice_cols(qkv, d, 2 * d)?;
    let v = g.slice_cols(qkv, 2 * d, 3 * d)?;
    let mixed = g.attention(q, k, v, batch, seq, heads)?;
    g.linear(mixed, params.proj_w, Some(params.proj_b))
}

/// Two-layer feed-forward network with exact GELU; `drop_rate` applies to the
/// hidden activation and the output.
pub fn gelu_mlp(g: &mut Graph<'_>, x: NodeId, params: &MlpParams, drop_rate: f64) -> Result<NodeId, NumericsError> {
    let hidden = g.linear(x, params.fc1_w, Some(params.fc1_b))?;
    let hidden = g.gelu(hidden);
    let hidden = g.dropout(hidden, drop_rate)?;
    let out = g.linear(hidden, params.fc2_w, Some(params.fc2_b))?;
    g.dropout(out, drop_rate)
}
