//! Transformer encoder regressor: input projection with sinusoidal position
//! encoding, multi-head self-attention, position-wise feed-forward, and a
//! linear decoder emitting the two weekly-total predictions.
//!
//! No causal mask is applied anywhere: both targets lie strictly after the
//! input window, so every day may attend to every other day.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CourageError, Result};
use crate::numerics::{Graph, Matrix, NodeId};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// How the encoder output rows are reduced before the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Use the representation of the last day in the window.
    LastRow,
    /// Average the representations of all days.
    Mean,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pooling::LastRow => write!(f, "last"),
            Pooling::Mean => write!(f, "mean"),
        }
    }
}

impl FromStr for Pooling {
    type Err = CourageError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Pooling::LastRow),
            "mean" => Ok(Pooling::Mean),
            other => Err(CourageError::config(format!(
                "unknown pooling '{other}' (expected 'last' or 'mean')"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Input feature dimension per day (K).
    pub feature_dim: usize,
    /// Window length in days (L).
    pub window_len: usize,
    /// Model dimension (M).
    pub model_dim: usize,
    /// Number of attention heads (H).
    pub heads: usize,
    /// Per-head query/key dimension.
    pub key_dim: usize,
    /// Per-head value dimension.
    pub value_dim: usize,
    /// Feed-forward hidden dimension.
    pub ff_dim: usize,
    /// Encoder layer count.
    pub layers: usize,
    pub pooling: Pooling,
    /// Residual connections plus layer normalization around both sublayers.
    pub residual_layernorm: bool,
}

impl ModelConfig {
    /// Default dimensions: 32 model dims, 1 encoder layer, 8 heads,
    /// 64 feed-forward dims, per-head dims M/H = 4, one-week window.
    pub fn default_for(feature_dim: usize) -> Self {
        ModelConfig {
            feature_dim,
            window_len: 7,
            model_dim: 32,
            heads: 8,
            key_dim: 4,
            value_dim: 4,
            ff_dim: 64,
            layers: 1,
            pooling: Pooling::LastRow,
            residual_layernorm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.model_dim.is_multiple_of(2) {
            return Err(CourageError::config(
                "model_dim must be even for the sinusoidal position encoding",
            ));
        }
        if self.heads == 0 || self.layers == 0 {
            return Err(CourageError::config("heads and layers must be >= 1"));
        }
        if self.feature_dim == 0
            || self.window_len == 0
            || self.key_dim == 0
            || self.value_dim == 0
            || self.ff_dim == 0
        {
            return Err(CourageError::config("all model dimensions must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    /// M x key_dim
    pub query: Matrix,
    /// M x key_dim
    pub key: Matrix,
    /// M x value_dim
    pub value: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    /// 1 x M
    pub gain: Matrix,
    /// 1 x M
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub heads: Vec<AttentionHead>,
    /// (heads * value_dim) x M aggregation of the concatenated head outputs.
    pub output_proj: Matrix,
    /// M x ff_dim
    pub ff1: Matrix,
    /// 1 x ff_dim
    pub ff1_bias: Matrix,
    /// ff_dim x M
    pub ff2: Matrix,
    /// 1 x M
    pub ff2_bias: Matrix,
    pub norm_attn: Option<LayerNormParams>,
    pub norm_ff: Option<LayerNormParams>,
}

/// Every learnable weight of the encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// M x K input projection.
    pub input_proj: Matrix,
    pub layers: Vec<EncoderLayer>,
    /// M x 2 joint decoder for both horizons.
    pub decoder: Matrix,
    /// 1 x 2
    pub decoder_bias: Matrix,
}

impl ModelParams {
    /// All-zero parameters with shapes from `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let norm = |on: bool| {
            on.then(|| LayerNormParams {
                gain: Matrix::zeros(1, config.model_dim),
                bias: Matrix::zeros(1, config.model_dim),
            })
        };
        ModelParams {
            input_proj: Matrix::zeros(config.model_dim, config.feature_dim),
            layers: (0..config.layers)
                .map(|_| EncoderLayer {
                    heads: (0..config.heads)
                        .map(|_| AttentionHead {
                            query: Matrix::zeros(config.model_dim, config.key_dim),
                            key: Matrix::zeros(config.model_dim, config.key_dim),
                            value: Matrix::zeros(config.model_dim, config.value_dim),
                        })
                        .collect(),
                    output_proj: Matrix::zeros(
                        config.heads * config.value_dim,
                        config.model_dim,
                    ),
                    ff1: Matrix::zeros(config.model_dim, config.ff_dim),
                    ff1_bias: Matrix::zeros(1, config.ff_dim),
                    ff2: Matrix::zeros(config.ff_dim, config.model_dim),
                    ff2_bias: Matrix::zeros(1, config.model_dim),
                    norm_attn: norm(config.residual_layernorm),
                    norm_ff: norm(config.residual_layernorm),
                })
                .collect(),
            decoder: Matrix::zeros(config.model_dim, 2),
            decoder_bias: Matrix::zeros(1, 2),
        }
    }

    /// Visits every tensor in a fixed order shared by the optimizer, the
    /// checkpoint format and the graph insertion below.
    pub fn for_each_tensor(&self, mut f: impl FnMut(&str, &Matrix)) {
        f("input_proj", &self.input_proj);
        for (li, layer) in self.layers.iter().enumerate() {
            for (hi, head) in layer.heads.iter().enumerate() {
                f(&format!("layer{li}.head{hi}.query"), &head.query);
                f(&format!("layer{li}.head{hi}.key"), &head.key);
                f(&format!("layer{li}.head{hi}.value"), &head.value);
            }
            f(&format!("layer{li}.output_proj"), &layer.output_proj);
            f(&format!("layer{li}.ff1"), &layer.ff1);
            f(&format!("layer{li}.ff1_bias"), &layer.ff1_bias);
            f(&format!("layer{li}.ff2"), &layer.ff2);
            f(&format!("layer{li}.ff2_bias"), &layer.ff2_bias);
            if let Some(norm) = &layer.norm_attn {
                f(&format!("layer{li}.norm_attn.gain"), &norm.gain);
                f(&format!("layer{li}.norm_attn.bias"), &norm.bias);
            }
            if let Some(norm) = &layer.norm_ff {
                f(&format!("layer{li}.norm_ff.gain"), &norm.gain);
                f(&format!("layer{li}.norm_ff.bias"), &norm.bias);
            }
        }
        f("decoder", &self.decoder);
        f("decoder_bias", &self.decoder_bias);
    }

    /// Mutable tensor visit in the same order as [`Self::for_each_tensor`].
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut Matrix)) {
        f("input_proj", &mut self.input_proj);
        for (li, layer) in self.layers.iter_mut().enumerate() {
            for (hi, head) in layer.heads.iter_mut().enumerate() {
                f(&format!("layer{li}.head{hi}.query"), &mut head.query);
                f(&format!("layer{li}.head{hi}.key"), &mut head.key);
                f(&format!("layer{li}.head{hi}.value"), &mut head.value);
            }
            f(&format!("layer{li}.output_proj"), &mut layer.output_proj);
            f(&format!("layer{li}.ff1"), &mut layer.ff1);
            f(&format!("layer{li}.ff1_bias"), &mut layer.ff1_bias);
            f(&format!("layer{li}.ff2"), &mut layer.ff2);
            f(&format!("layer{li}.ff2_bias"), &mut layer.ff2_bias);
            if let Some(norm) = &mut layer.norm_attn {
                f(&format!("layer{li}.norm_attn.gain"), &mut norm.gain);
                f(&format!("layer{li}.norm_attn.bias"), &mut norm.bias);
            }
            if let Some(norm) = &mut layer.norm_ff {
                f(&format!("layer{li}.norm_ff.gain"), &mut norm.gain);
                f(&format!("layer{li}.norm_ff.bias"), &mut norm.bias);
            }
        }
        f("decoder", &mut self.decoder);
        f("decoder_bias", &mut self.decoder_bias);
    }

    pub fn tensor_count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, _| n += 1);
        n
    }

    /// Inserts every tensor as a graph leaf, preserving the visit order.
    pub fn insert_into(&self, g: &mut Graph) -> GraphParams {
        GraphParams {
            input_proj: g.leaf(self.input_proj.clone()),
            layers: self
                .layers
                .iter()
                .map(|layer| GraphLayer {
                    heads: layer
                        .heads
                        .iter()
                        .map(|h| GraphHead {
                            query: g.leaf(h.query.clone()),
                            key: g.leaf(h.key.clone()),
                            value: g.leaf(h.value.clone()),
                        })
                        .collect(),
                    output_proj: g.leaf(layer.output_proj.clone()),
                    ff1: g.leaf(layer.ff1.clone()),
                    ff1_bias: g.leaf(layer.ff1_bias.clone()),
                    ff2: g.leaf(layer.ff2.clone()),
                    ff2_bias: g.leaf(layer.ff2_bias.clone()),
                    norm_attn: layer
                        .norm_attn
                        .as_ref()
                        .map(|n| (g.leaf(n.gain.clone()), g.leaf(n.bias.clone()))),
                    norm_ff: layer
                        .norm_ff
                        .as_ref()
                        .map(|n| (g.leaf(n.gain.clone()), g.leaf(n.bias.clone()))),
                })
                .collect(),
            decoder: g.leaf(self.decoder.clone()),
            decoder_bias: g.leaf(self.decoder_bias.clone()),
        }
    }
}

/// Leaf ids of the parameters inside one graph.
pub struct GraphHead {
    pub query: NodeId,
    pub key: NodeId,
    pub value: NodeId,
}

pub struct GraphLayer {
    pub heads: Vec<GraphHead>,
    pub output_proj: NodeId,
    pub ff1: NodeId,
    pub ff1_bias: NodeId,
    pub ff2: NodeId,
    pub ff2_bias: NodeId,
    pub norm_attn: Option<(NodeId, NodeId)>,
    pub norm_ff: Option<(NodeId, NodeId)>,
}

pub struct GraphParams {
    pub input_proj: NodeId,
    pub layers: Vec<GraphLayer>,
    pub decoder: NodeId,
    pub decoder_bias: NodeId,
}

impl GraphParams {
    /// Reassembles a parameter view over externally created leaves that
    /// follow the [`ModelParams::for_each_tensor`] order. Used by the
    /// finite-difference harness, which owns the leaves itself.
    pub fn from_leaves(config: &ModelConfig, leaves: &[NodeId]) -> GraphParams {
        let mut it = leaves.iter().copied();
        let mut next = || it.next().expect("leaf count mismatch");
        let input_proj = next();
        let layers = (0..config.layers)
            .map(|_| {
                let heads = (0..config.heads)
                    .map(|_| GraphHead {
                        query: next(),
                        key: next(),
                        value: next(),
                    })
                    .collect();
                GraphLayer {
                    heads,
                    output_proj: next(),
                    ff1: next(),
                    ff1_bias: next(),
                    ff2: next(),
                    ff2_bias: next(),
                    norm_attn: config.residual_layernorm.then(|| (next(), next())),
                    norm_ff: config.residual_layernorm.then(|| (next(), next())),
                }
            })
            .collect();
        GraphParams {
            input_proj,
            layers,
            decoder: next(),
            decoder_bias: next(),
        }
    }

    /// Leaf ids in the [`ModelParams::for_each_tensor`] order.
    pub fn node_list(&self) -> Vec<NodeId> {
        let mut out = vec![self.input_proj];
        for layer in &self.layers {
            for head in &layer.heads {
                out.extend([head.query, head.key, head.value]);
            }
            out.extend([
                layer.output_proj,
                layer.ff1,
                layer.ff1_bias,
                layer.ff2,
                layer.ff2_bias,
            ]);
            if let Some((gain, bias)) = layer.norm_attn {
                out.extend([gain, bias]);
            }
            if let Some((gain, bias)) = layer.norm_ff {
                out.extend([gain, bias]);
            }
        }
        out.extend([self.decoder, self.decoder_bias]);
        out
    }
}

/// Sinusoidal position encoding: entry `(j, 2i)` is `sin(j / 10000^(2i/M))`
/// and `(j, 2i+1)` is `cos(j / 10000^(2i/M))` for positions `j = 0..L-1`.
pub fn positional_encoding(window_len: usize, model_dim: usize) -> Result<Matrix> {
    if !model_dim.is_multiple_of(2) {
        return Err(CourageError::config(format!(
            "position encoding needs an even model dimension, got {model_dim}"
        )));
    }
    let mut pe = Matrix::zeros(window_len, model_dim);
    for j in 0..window_len {
        for i in 0..model_dim / 2 {
            let angle = j as f64 / 10000f64.powf(2.0 * i as f64 / model_dim as f64);
            pe.set(j, 2 * i, angle.sin());
            pe.set(j, 2 * i + 1, angle.cos());
        }
    }
    Ok(pe)
}

/// Projects the K x L day-vector sequence to L x M and adds a caller-supplied
/// encoding matrix. Exposed separately so tests can zero the encoding.
pub fn embed_with_encoding(
    g: &mut Graph,
    input_proj: NodeId,
    features: &Matrix,
    encoding: &Matrix,
) -> Result<NodeId> {
    let proj_shape = g.value(input_proj).shape();
    if proj_shape.1 != features.rows() {
        return Err(CourageError::Dim {
            op: "embed",
            lhs_rows: proj_shape.0,
            lhs_cols: proj_shape.1,
            rhs_rows: features.rows(),
            rhs_cols: features.cols(),
        });
    }
    let day_vectors = g.leaf(features.clone());
    let projected = g.matmul(input_proj, day_vectors)?;
    let by_day = g.transpose(projected);
    let enc = g.leaf(encoding.clone());
    g.add(by_day, enc)
}

/// Embeds one window: `(U * E)^T` plus the sinusoidal position encoding,
/// giving one M-dimensional row per day.
pub fn embed(
    g: &mut Graph,
    input_proj: NodeId,
    config: &ModelConfig,
    features: &Matrix,
) -> Result<NodeId> {
    let pe = positional_encoding(config.window_len, config.model_dim)?;
    embed_with_encoding(g, input_proj, features, &pe)
}

/// One unmasked scaled dot-product attention head over L x M input.
pub fn self_attention_head(
    g: &mut Graph,
    x: NodeId,
    head: &GraphHead,
    key_dim: usize,
) -> Result<NodeId> {
    let q = g.matmul(x, head.query)?;
    let k = g.matmul(x, head.key)?;
    let v = g.matmul(x, head.value)?;
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (key_dim as f64).sqrt());
    let weights = g.softmax_rows(scaled)?;
    g.matmul(weights, v)
}

/// Concatenates all head outputs column-wise and applies the aggregation
/// projection, yielding L x M.
pub fn multi_head(
    g: &mut Graph,
    x: NodeId,
    layer: &GraphLayer,
    config: &ModelConfig,
) -> Result<NodeId> {
    let mut heads = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        heads.push(self_attention_head(g, x, head, config.key_dim)?);
    }
    let cat = g.concat_cols(&heads)?;
    g.matmul(cat, layer.output_proj)
}

/// Position-wise feed-forward: `relu(x W1 + b1) W2 + b2`; row j of the
/// output depends only on row j of the input.
pub fn feed_forward(g: &mut Graph, x: NodeId, layer: &GraphLayer) -> Result<NodeId> {
    let h = g.matmul(x, layer.ff1)?;
    let h = g.broadcast_add_bias(h, layer.ff1_bias)?;
    let h = g.relu(h);
    let out = g.matmul(h, layer.ff2)?;
    g.broadcast_add_bias(out, layer.ff2_bias)
}

fn check_finite(g: &Graph, node: NodeId, label: &str) -> Result<()> {
    if g.value(node).is_finite() {
        Ok(())
    } else {
        Err(CourageError::numeric(format!(
            "non-finite activation in {label}"
        )))
    }
}

/// Full forward pass on an existing graph. Returns the 1x2 prediction node
/// (standardized target space) plus the attention weights per layer and head.
pub fn forward_on_graph(
    g: &mut Graph,
    params: &GraphParams,
    config: &ModelConfig,
    features: &Matrix,
) -> Result<NodeId> {
    forward_recording(g, params, config, features, None)
}

/// Same as [`forward_on_graph`] but clones every attention weight matrix out
/// of the graph for inspection.
pub fn forward_with_attention(
    g: &mut Graph,
    params: &GraphParams,
    config: &ModelConfig,
    features: &Matrix,
) -> Result<(NodeId, Vec<Vec<Matrix>>)> {
    let mut attn = Vec::new();
    let out = forward_recording(g, params, config, features, Some(&mut attn))?;
    Ok((out, attn))
}

fn forward_recording(
    g: &mut Graph,
    params: &GraphParams,
    config: &ModelConfig,
    features: &Matrix,
    mut record: Option<&mut Vec<Vec<Matrix>>>,
) -> Result<NodeId> {
    if features.shape() != (config.feature_dim, config.window_len) {
        return Err(CourageError::Dim {
            op: "forward",
            lhs_rows: config.feature_dim,
            lhs_cols: config.window_len,
            rhs_rows: features.rows(),
            rhs_cols: features.cols(),
        });
    }
    let mut x = embed(g, params.input_proj, config, features)?;
    check_finite(g, x, "embedding")?;

    for (li, layer) in params.layers.iter().enumerate() {
        let attended = if let Some(rec) = record.as_deref_mut() {
            let (node, weights) = multi_head_recording(g, x, layer, config)?;
            rec.push(weights);
            node
        } else {
            multi_head(g, x, layer, config)?
        };
        x = sublayer_join(g, x, attended, layer.norm_attn)?;
        check_finite(g, x, &format!("encoder layer {li} attention"))?;

        let ff = feed_forward(g, x, layer)?;
        x = sublayer_join(g, x, ff, layer.norm_ff)?;
        check_finite(g, x, &format!("encoder layer {li} feed-forward"))?;
    }

    let pooled = match config.pooling {
        Pooling::LastRow => g.row_select(x, config.window_len - 1)?,
        Pooling::Mean => g.mean_rows(x)?,
    };
    let decoded = g.matmul(pooled, params.decoder)?;
    let out = g.broadcast_add_bias(decoded, params.decoder_bias)?;
    check_finite(g, out, "decoder")?;
    Ok(out)
}

fn multi_head_recording(
    g: &mut Graph,
    x: NodeId,
    layer: &GraphLayer,
    config: &ModelConfig,
) -> Result<(NodeId, Vec<Matrix>)> {
    let mut heads = Vec::with_capacity(layer.heads.len());
    let mut weights = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let q = g.matmul(x, head.query)?;
        let k = g.matmul(x, head.key)?;
        let v = g.matmul(x, head.value)?;
        let kt = g.transpose(k);
        let scores = g.matmul(q, kt)?;
        let scaled = g.scale(scores, 1.0 / (config.key_dim as f64).sqrt());
        let attn = g.softmax_rows(scaled)?;
        weights.push(g.value(attn).clone());
        heads.push(g.matmul(attn, v)?);
    }
    let cat = g.concat_cols(&heads)?;
    Ok((g.matmul(cat, layer.output_proj)?, weights))
}

fn sublayer_join(
    g: &mut Graph,
    input: NodeId,
    sublayer: NodeId,
    norm: Option<(NodeId, NodeId)>,
) -> Result<NodeId> {
    match norm {
        Some((gain, bias)) => {
            let sum = g.add(input, sublayer)?;
            g.layer_norm_rows(sum, gain, bias, LAYER_NORM_EPS)
        }
        None => Ok(sublayer),
    }
}

/// Single-window inference: predictions for (week 1, week 2) in
/// standardized target space.
pub fn forward(params: &ModelParams, config: &ModelConfig, features: &Matrix) -> Result<(f64, f64)> {
    let mut g = Graph::new();
    let gp = params.insert_into(&mut g);
    let out = forward_on_graph(&mut g, &gp, config, features)?;
    let v = g.value(out);
    Ok((v.get(0, 0), v.get(0, 1)))
}

/// Attention weight matrices (one L x L matrix per layer and head) of a
/// single forward pass.
pub fn attention_weights(
    params: &ModelParams,
    config: &ModelConfig,
    features: &Matrix,
) -> Result<Vec<Vec<Matrix>>> {
    let mut g = Graph::new();
    let gp = params.insert_into(&mut g);
    let (_, attn) = forward_with_attention(&mut g, &gp, config, features)?;
    Ok(attn)
}

/// Seed-determined initialization: weights uniform in
/// `+-sqrt(6 / (fan_in + fan_out))`, biases zero, layer-norm gains one.
pub fn init_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(config);
    params.for_each_tensor_mut(|name, tensor| {
        if name.ends_with("bias") {
            // zero already
        } else if name.ends_with("gain") {
            for v in tensor.data_mut() {
                *v = 1.0;
            }
        } else {
            let limit = (6.0 / (tensor.rows() + tensor.cols()) as f64).sqrt();
            for v in tensor.data_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
    });
    params
}
