//! Transformer-encoder temporal pooling with a learnable classification token.
//!
//! The temporal features `x_1..x_T` get a learned positional embedding, a
//! seed row is prepended at position 0 (the classification embedding, or the
//! mean of the features when the token is disabled), and the sequence runs
//! through post-norm encoder layers:
//!
//! ```text
//! z  = LN(x + MHA(x))
//! y  = LN(z + W2 · GELU(W1 z + b1) + b2)
//! ```
//!
//! Row 0 of the last layer is `y_cls`, which feeds the classifier.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{graph_dropout, Linear, LinearInit};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// How masked temporal positions are removed from the attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Zero the masked columns after the softmax and leave rows unnormalised.
    #[default]
    Zero,
    /// Exclude masked columns from the softmax, so rows still sum to one.
    Renormalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BertPoolerConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    /// PFFN hidden width; `None` means `4 * d_model`.
    pub pffn_hidden: Option<usize>,
    /// Drop probability applied to the PFFN hidden activation.
    pub dropout_p: f64,
    /// Per-position probability of masking a temporal feature while training.
    pub mask_prob: f64,
    pub mask_mode: MaskMode,
    pub use_cls_token: bool,
    pub use_positional: bool,
    pub max_positions: usize,
    /// Std of the normal init for the classification token and positional table.
    pub embedding_init_std: f64,
    /// Std of the normal init for the encoder linears; `None` selects fan-in uniform.
    pub linear_init_std: Option<f64>,
    pub layer_norm_eps: f64,
}

impl Default for BertPoolerConfig {
    fn default() -> Self {
        Self::new(512)
    }
}

impl BertPoolerConfig {
    /// One layer, eight heads, 4·D PFFN, mask probability 0.2, dropout 0.1.
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            num_heads: 8,
            num_layers: 1,
            pffn_hidden: None,
            dropout_p: 0.1,
            mask_prob: 0.2,
            mask_mode: MaskMode::Zero,
            use_cls_token: true,
            use_positional: true,
            max_positions: 64,
            embedding_init_std: 0.02,
            linear_init_std: Some(0.02),
            layer_norm_eps: 1e-12,
        }
    }

    /// The published head settings, including the PFFN drop ratio of 0.9.
    pub fn paper(d_model: usize) -> Self {
        Self {
            dropout_p: 0.9,
            ..Self::new(d_model)
        }
    }

    pub fn pffn_hidden(&self) -> usize {
        self.pffn_hidden.unwrap_or(4 * self.d_model)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.num_heads == 0 || self.num_layers == 0 {
            return Err(Error::config(format!(
                "bert: d_model ({}), num_heads ({}) and num_layers ({}) must be positive",
                self.d_model, self.num_heads, self.num_layers
            )));
        }
        if !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "bert: d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.pffn_hidden() == 0 {
            return Err(Error::config("bert: pffn_hidden must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!(
                "bert: dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::config(format!(
                "bert: mask_prob must lie in [0, 1), got {}",
                self.mask_prob
            )));
        }
        if self.max_positions == 0 {
            return Err(Error::config("bert: max_positions must be positive"));
        }
        Ok(())
    }

    /// Parameters of one encoder layer: four `D×D` projections, the PFFN and
    /// two layer-norm affines, `12D² + 13D` at the default PFFN width.
    pub fn layer_params(&self) -> u64 {
        let d = self.d_model as u64;
        let h = self.pffn_hidden() as u64;
        4 * (d * d + d) + (h * d + h) + (d * h + d) + 4 * d
    }

    pub fn cls_params(&self) -> u64 {
        if self.use_cls_token {
            self.d_model as u64
        } else {
            0
        }
    }

    pub fn positional_params(&self) -> u64 {
        if self.use_positional {
            ((self.max_positions + 1) * self.d_model) as u64
        } else {
            0
        }
    }

    pub fn num_params(&self) -> u64 {
        self.num_layers as u64 * self.layer_params() + self.cls_params() + self.positional_params()
    }
}

#[derive(Debug, Clone)]
pub struct BertLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

/// Learnable state of the BERT pooler.
#[derive(Debug, Clone)]
pub struct BertPooler {
    pub cfg: BertPoolerConfig,
    pub cls: Option<ParamId>,
    pub positional: Option<ParamId>,
    pub layers: Vec<BertLayer>,
}

/// Intermediate nodes of one encoder layer, exposed for inspection.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Value projection `g(x)` of the full augmented sequence, `[(T+1) × D]`.
    pub values: Var,
    /// Attention weights per head after masking, each `[(T+1) × (T+1)]`.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct PoolOutput {
    /// `[D]`
    pub y_cls: Var,
    /// `[T × D]`
    pub y_seq: Var,
    /// Temporal positions (1-based, in augmented indexing) masked on this pass.
    pub masked: Vec<usize>,
    pub layers: Vec<LayerTrace>,
}

impl BertPooler {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &BertPoolerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let emb = Init::Normal {
            std: cfg.embedding_init_std,
        };
        let cls = cfg
            .use_cls_token
            .then(|| store.insert(format!("{name}.cls"), emb.sample(&[d], rng)));
        let positional = cfg.use_positional.then(|| {
            store.insert(
                format!("{name}.positional"),
                emb.sample(&[cfg.max_positions + 1, d], rng),
            )
        });
        let init = cfg.linear_init_std.map_or(LinearInit::FanIn, LinearInit::Normal);
        let hidden = cfg.pffn_hidden();
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let p = format!("{name}.layer{l}");
            layers.push(BertLayer {
                query: Linear::new(store, &format!("{p}.attn.query"), d, d, init, rng)?,
                key: Linear::new(store, &format!("{p}.attn.key"), d, d, init, rng)?,
                value: Linear::new(store, &format!("{p}.attn.value"), d, d, init, rng)?,
                output: Linear::new(store, &format!("{p}.attn.output"), d, d, init, rng)?,
                ln1_gamma: store.insert(format!("{p}.ln1.gamma"), Tensor::ones([d])),
                ln1_beta: store.insert(format!("{p}.ln1.beta"), Tensor::zeros([d])),
                ffn_in: Linear::new(store, &format!("{p}.pffn.in"), d, hidden, init, rng)?,
                ffn_out: Linear::new(store, &format!("{p}.pffn.out"), hidden, d, init, rng)?,
                ln2_gamma: store.insert(format!("{p}.ln2.gamma"), Tensor::ones([d])),
                ln2_beta: store.insert(format!("{p}.ln2.beta"), Tensor::zeros([d])),
            });
        }
        Ok(Self {
            cfg: cfg.clone(),
            cls,
            positional,
            layers,
        })
    }

    /// Pool `features: [T × D]` into `y_cls` and the per-position outputs.
    ///
    /// In training mode each temporal position is masked independently with
    /// probability `mask_prob`; evaluation mode never masks.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, features: Var) -> Result<PoolOutput> {
        let masked = if g.is_training() && self.cfg.mask_prob > 0.0 {
            let t = g.shape(features)[0];
            let p = self.cfg.mask_prob;
            let rng = g.rng();
            let set: Vec<usize> = (1..=t).filter(|_| rng.random::<f64>() < p).collect();
            g.mark_stochastic();
            set
        } else {
            Vec::new()
        };
        self.forward_masked(g, features, &masked)
    }

    /// Like [`BertPooler::forward`] with an explicit set of masked positions.
    pub fn forward_masked<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        features: Var,
        masked: &[usize],
    ) -> Result<PoolOutput> {
        let cfg = &self.cfg;
        let shape = g.shape(features).to_vec();
        if shape.len() != 2 || shape[1] != cfg.d_model {
            return Err(Error::dim("bert_pool", &shape, &[cfg.d_model]));
        }
        let t = shape[0];
        if t > cfg.max_positions {
            return Err(Error::config(format!(
                "bert_pool: sequence length {t} exceeds max_positions {}",
                cfg.max_positions
            )));
        }
        let seed = match self.cls {
            Some(cls) => g.param(cls),
            None => g.mean_axis(features, 0)?,
        };
        let seed = g.reshape(seed, [1, cfg.d_model])?;
        let mut z = g.concat(&[seed, features], 0)?;
        if let Some(pos) = self.positional {
            let table = g.param(pos);
            let rows = g.slice(table, 0, 0, t + 1)?;
            z = g.add(z, rows)?;
        }
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, trace) = layer.forward(g, z, cfg, masked)?;
            z = out;
            traces.push(trace);
        }
        let y_cls = g.row(z, 0)?;
        let y_seq = g.slice(z, 0, 1, t)?;
        Ok(PoolOutput {
            y_cls,
            y_seq,
            masked: masked.to_vec(),
            layers: traces,
        })
    }
}

/// Zero the attention columns of `masked` positions without renormalising rows.
///
/// Position 0 is the classification slot and may not be masked.
pub fn apply_feature_mask<T: Scalar>(g: &mut Graph<T>, weights: Var, masked: &[usize]) -> Result<Var> {
    if masked.is_empty() {
        return Ok(weights);
    }
    let shape = g.shape(weights).to_vec();
    let mask = column_mask::<T>(&shape, masked, T::zero(), T::one())?;
    g.mul_const(weights, mask)
}

fn column_mask<T: Scalar>(shape: &[usize], masked: &[usize], hit: T, miss: T) -> Result<Tensor<T>> {
    if shape.len() != 2 {
        return Err(Error::dim("feature mask", shape, &[]));
    }
    let (rows, cols) = (shape[0], shape[1]);
    for &j in masked {
        if j == 0 {
            return Err(Error::contract("the classification position cannot be masked"));
        }
        if j >= cols {
            return Err(Error::contract(format!(
                "masked position {j} out of range for {cols} columns"
            )));
        }
    }
    let mut data = vec![miss; rows * cols];
    for r in 0..rows {
        for &j in masked {
            data[r * cols + j] = hit;
        }
    }
    Tensor::new(shape.to_vec(), data)
}

/// Per-head attention weights `softmax_j(θ(x_i)ᵀ φ(x_j) / sqrt(D/H))` over `f_aug: [(T+1) × D]`.
pub fn attention_scores<T: Scalar>(
    g: &mut Graph<T>,
    f_aug: Var,
    layer: &BertLayer,
    num_heads: usize,
) -> Result<Vec<Var>> {
    let q = layer.query.forward(g, f_aug)?;
    let k = layer.key.forward(g, f_aug)?;
    head_weights(g, q, k, num_heads, None)
}

fn head_weights<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    num_heads: usize,
    logit_mask: Option<&Tensor<T>>,
) -> Result<Vec<Var>> {
    let d = g.shape(q)[1];
    let dh = d / num_heads;
    let scale = T::one() / T::from_f64(dh as f64).sqrt();
    (0..num_heads)
        .map(|h| {
            let qh = g.slice(q, 1, h * dh, dh)?;
            let kh = g.slice(k, 1, h * dh, dh)?;
            let s = g.matmul_t(qh, kh)?;
            let mut s = g.scale(s, scale);
            if let Some(m) = logit_mask {
                let m = g.constant(m.clone());
                s = g.add(s, m)?;
            }
            g.softmax(s, 1)
        })
        .collect()
}

/// Position-wise feed-forward network `W2 · GELU(W1 x + b1) + b2` with
/// dropout `p` on the hidden activation.
pub fn pffn<T: Scalar>(g: &mut Graph<T>, x: Var, w_in: &Linear, w_out: &Linear, p: f64) -> Result<Var> {
    let h = w_in.forward(g, x)?;
    let h = g.gelu(h);
    let h = graph_dropout(g, h, p)?;
    w_out.forward(g, h)
}

impl BertLayer {
    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        z: Var,
        cfg: &BertPoolerConfig,
        masked: &[usize],
    ) -> Result<(Var, LayerTrace)> {
        let q = self.query.forward(g, z)?;
        let k = self.key.forward(g, z)?;
        let v = self.value.forward(g, z)?;
        let n = g.shape(z)[0];

        let renorm = (cfg.mask_mode == MaskMode::Renormalize && !masked.is_empty())
            .then(|| column_mask::<T>(&[n, n], masked, T::neg_infinity(), T::zero()))
            .transpose()?;
        let mut weights = head_weights(g, q, k, cfg.num_heads, renorm.as_ref())?;
        if cfg.mask_mode == MaskMode::Zero {
            for w in &mut weights {
                *w = apply_feature_mask(g, *w, masked)?;
            }
        }

        let dh = cfg.head_dim();
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for (h, &w) in weights.iter().enumerate() {
            let vh = g.slice(v, 1, h * dh, dh)?;
            heads.push(g.matmul(w, vh)?);
        }
        let mixed = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        let attn = self.output.forward(g, mixed)?;
        let r1 = g.add(z, attn)?;
        let (g1, b1) = (g.param(self.ln1_gamma), g.param(self.ln1_beta));
        let z1 = g.layer_norm(r1, g1, b1, cfg.layer_norm_eps)?;

        let f = pffn(g, z1, &self.ffn_in, &self.ffn_out, cfg.dropout_p)?;
        let r2 = g.add(z1, f)?;
        let (g2, b2) = (g.param(self.ln2_gamma), g.param(self.ln2_beta));
        let out = g.layer_norm(r2, g2, b2, cfg.layer_norm_eps)?;
        Ok((
            out,
            LayerTrace {
                values: v,
                attention: weights,
            },
        ))
    }
}
