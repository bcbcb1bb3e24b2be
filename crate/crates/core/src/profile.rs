//! Exact parameter counts and analytic FLOP estimates.
//!
//! One multiply-accumulate counts as two FLOPs: a `[m×k]·[k×n]` product is
//! `2mkn`, a 3D convolution is `2 · out_elems · in_ch · kT·kH·kW`. Bias and
//! residual additions cost one FLOP per output element. Nonlinear
//! elementwise maps use the per-element constants below.

use std::fmt::Write as _;

use crate::backbone::ToyBackboneConfig;
use crate::error::Result;
use crate::nn::Lstm;
use crate::pool::nonlocal::NonlocalBlock;
use crate::pool::{BertPoolerConfig, FusionConfig, FusionKind, HeadConfig, PoolerConfig};

pub const SOFTMAX_FLOPS: u64 = 5;
pub const GELU_FLOPS: u64 = 8;
pub const LAYER_NORM_FLOPS: u64 = 8;
pub const SIGMOID_FLOPS: u64 = 4;
pub const TANH_FLOPS: u64 = 4;

pub const CONVENTION: &str = "1 MAC = 2 FLOPs";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamReport {
    pub entries: Vec<(String, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopReport {
    /// Human-readable description of the input geometry.
    pub geometry: String,
    pub entries: Vec<(String, u64)>,
}

fn total(entries: &[(String, u64)]) -> u64 {
    entries.iter().map(|(_, v)| v).sum()
}

fn prefixed(prefix: &str, entries: Vec<(String, u64)>) -> impl Iterator<Item = (String, u64)> + '_ {
    entries.into_iter().map(move |(k, v)| (format!("{prefix}{k}"), v))
}

impl ParamReport {
    pub fn total(&self) -> u64 {
        total(&self.entries)
    }

    pub fn get(&self, component: &str) -> Option<u64> {
        self.entries.iter().find(|(k, _)| k == component).map(|e| e.1)
    }

    pub fn extend_prefixed(&mut self, prefix: &str, other: ParamReport) {
        self.entries.extend(prefixed(prefix, other.entries));
    }
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        total(&self.entries)
    }

    pub fn get(&self, component: &str) -> Option<u64> {
        self.entries.iter().find(|(k, _)| k == component).map(|e| e.1)
    }

    pub fn extend_prefixed(&mut self, prefix: &str, other: FlopReport) {
        self.entries.extend(prefixed(prefix, other.entries));
    }
}

pub fn matmul_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

/// `tokens` rows through a `in → out` affine map, bias included.
pub fn linear_flops(tokens: usize, inp: usize, out: usize) -> u64 {
    matmul_flops(tokens, inp, out) + (tokens * out) as u64
}

pub fn conv3d_flops(out_elems: u64, in_channels: usize, kernel: [usize; 3]) -> u64 {
    2 * out_elems * (in_channels * kernel.iter().product::<usize>()) as u64
}

/// FLOPs of one encoder layer over `tokens` positions, split by term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BertLayerFlops {
    /// Query, key, value and output projections.
    pub projections: u64,
    /// Scores, scaling, softmax and value mixing: quadratic in `tokens`.
    pub attention: u64,
    pub pffn: u64,
    /// Residual additions and layer norms.
    pub norm: u64,
}

impl BertLayerFlops {
    pub fn total(&self) -> u64 {
        self.projections + self.attention + self.pffn + self.norm
    }
}

pub fn bert_layer_flops(cfg: &BertPoolerConfig, tokens: usize) -> BertLayerFlops {
    let (n, d, h, p) = (tokens as u64, cfg.d_model, cfg.num_heads as u64, cfg.pffn_hidden());
    let nd = n * d as u64;
    BertLayerFlops {
        projections: 4 * linear_flops(tokens, d, d),
        attention: 2 * matmul_flops(tokens, d, tokens) + (1 + SOFTMAX_FLOPS) * n * n * h,
        pffn: linear_flops(tokens, d, p) + GELU_FLOPS * n * p as u64 + linear_flops(tokens, p, d),
        norm: 2 * nd + 2 * LAYER_NORM_FLOPS * nd,
    }
}

/// Itemised parameters of a BERT pooler.
pub fn bert_params(cfg: &BertPoolerConfig) -> ParamReport {
    let d = cfg.d_model as u64;
    let hidden = cfg.pffn_hidden() as u64;
    let mut entries = Vec::new();
    for l in 0..cfg.num_layers {
        entries.push((format!("layer{l}.attention"), 4 * (d * d + d)));
        entries.push((format!("layer{l}.pffn"), 2 * hidden * d + hidden + d));
        entries.push((format!("layer{l}.layer_norm"), 4 * d));
    }
    if cfg.use_cls_token {
        entries.push(("cls_token".into(), cfg.cls_params()));
    }
    if cfg.use_positional {
        entries.push(("positional".into(), cfg.positional_params()));
    }
    ParamReport { entries }
}

pub fn bert_flops(cfg: &BertPoolerConfig, seq_len: usize) -> FlopReport {
    let tokens = seq_len + 1;
    let mut entries = Vec::new();
    let d = cfg.d_model as u64;
    let mut embed = 0;
    if !cfg.use_cls_token {
        embed += seq_len as u64 * d;
    }
    if cfg.use_positional {
        embed += tokens as u64 * d;
    }
    if embed > 0 {
        entries.push(("embedding".into(), embed));
    }
    for l in 0..cfg.num_layers {
        let f = bert_layer_flops(cfg, tokens);
        entries.push((format!("layer{l}.projections"), f.projections));
        entries.push((format!("layer{l}.attention"), f.attention));
        entries.push((format!("layer{l}.pffn"), f.pffn));
        entries.push((format!("layer{l}.norm"), f.norm));
    }
    FlopReport {
        geometry: format!("{seq_len} x {}", cfg.d_model),
        entries,
    }
}

/// Parameter counts of a classification head, by component.
pub fn head_params(cfg: &HeadConfig) -> Result<ParamReport> {
    let mut r = ParamReport::default();
    match &cfg.pooler {
        PoolerConfig::Avg {} | PoolerConfig::Concat {} => {}
        PoolerConfig::Bert(_) => r.extend_prefixed("pool.", bert_params(&cfg.bert_config().expect("bert"))),
        PoolerConfig::Lstm { hidden, layers } => {
            r.entries.push(("pool.lstm".into(), Lstm::count(cfg.feature_dim, *hidden, *layers)));
        }
        PoolerConfig::ConcatFc { .. } | PoolerConfig::NonlocalConcatFc { .. } => {
            if matches!(cfg.pooler, PoolerConfig::NonlocalConcatFc { .. }) {
                r.entries.push(("pool.nonlocal".into(), NonlocalBlock::count(cfg.feature_dim)));
            }
            let w = cfg.pooled_dim()? as u64;
            r.entries.push(("pool.fc".into(), (cfg.seq_len * cfg.feature_dim) as u64 * w + w));
        }
    }
    r.entries.push(("classifier".into(), cfg.classifier_params()?));
    Ok(r)
}

/// FLOPs of one forward pass of a head over one `[T × D]` sample.
pub fn head_flops(cfg: &HeadConfig) -> Result<FlopReport> {
    let (t, d, c) = (cfg.seq_len, cfg.feature_dim, cfg.num_classes);
    let (tu, du) = (t as u64, d as u64);
    let mut r = FlopReport {
        geometry: format!("{t} x {d}"),
        entries: Vec::new(),
    };
    match &cfg.pooler {
        PoolerConfig::Avg {} => r.entries.push(("pool.tgap".into(), tu * du)),
        PoolerConfig::Concat {} => {}
        PoolerConfig::Bert(_) => r.extend_prefixed("pool.", bert_flops(&cfg.bert_config().expect("bert"), t)),
        PoolerConfig::Lstm { hidden, layers } => {
            let h = *hidden;
            let mut f = 0;
            for l in 0..*layers {
                let inp = if l == 0 { d } else { h };
                let gates = linear_flops(1, inp, 4 * h) + linear_flops(1, h, 4 * h) + 4 * h as u64;
                let cell = (3 * SIGMOID_FLOPS + 2 * TANH_FLOPS + 3) * h as u64;
                f += tu * (gates + cell);
            }
            r.entries.push(("pool.lstm".into(), f));
        }
        PoolerConfig::ConcatFc { .. } | PoolerConfig::NonlocalConcatFc { .. } => {
            if matches!(cfg.pooler, PoolerConfig::NonlocalConcatFc { .. }) {
                let f = 4 * linear_flops(t, d, d)
                    + 2 * matmul_flops(t, d, t)
                    + SOFTMAX_FLOPS * tu * tu
                    + tu * du;
                r.entries.push(("pool.nonlocal".into(), f));
            }
            let w = cfg.pooled_dim()?;
            r.entries.push(("pool.fc".into(), linear_flops(1, t * d, w) + GELU_FLOPS * w as u64));
        }
    }
    r.entries.push(("classifier".into(), linear_flops(1, cfg.pooled_dim()?, c)));
    Ok(r)
}

pub fn backbone_params(cfg: &ToyBackboneConfig) -> Result<ParamReport> {
    Ok(ParamReport {
        entries: cfg.layers()?.iter().map(|l| (l.name.clone(), l.num_params())).collect(),
    })
}

pub fn backbone_flops(cfg: &ToyBackboneConfig) -> Result<FlopReport> {
    let layers = cfg.layers()?;
    let mut entries: Vec<(String, u64)> = layers
        .iter()
        .map(|l| {
            let out = l.out_numel();
            (l.name.clone(), conv3d_flops(out, l.in_channels, l.kernel) + out + GELU_FLOPS * out)
        })
        .collect();
    entries.push(("spatial_pool".into(), layers.last().expect("nonempty").out_numel()));
    let [c, t, h, w] = cfg.input;
    Ok(FlopReport {
        geometry: format!("{c} x {t} x {h} x {w}"),
        entries,
    })
}

pub fn fusion_params(cfg: &FusionConfig) -> ParamReport {
    let mut r = ParamReport::default();
    r.entries.push(("slow_reduce".into(), (cfg.slow_dim * cfg.slow_reduced + cfg.slow_reduced) as u64));
    if let Some(f) = cfg.fast_reduced {
        r.entries.push(("fast_reduce".into(), (cfg.fast_dim * f + f) as u64));
    }
    for (i, b) in cfg.bert_configs().iter().enumerate() {
        r.extend_prefixed(&format!("bert{i}."), bert_params(b));
    }
    let w = cfg.classifier_input_width();
    r.entries.push(("classifier".into(), (w * cfg.num_classes + cfg.num_classes) as u64));
    r
}

pub fn fusion_flops(cfg: &FusionConfig) -> FlopReport {
    let (ts, tf) = (cfg.slow_len, cfg.fast_len());
    let mut r = FlopReport {
        geometry: format!("slow {ts} x {}, fast {tf} x {}", cfg.slow_dim, cfg.fast_dim),
        entries: vec![("slow_reduce".into(), linear_flops(ts, cfg.slow_dim, cfg.slow_reduced))],
    };
    let bert_lens = match cfg.kind {
        FusionKind::Early => {
            r.entries.push(("fast_downsample".into(), (tf * cfg.fast_dim) as u64));
            vec![ts]
        }
        FusionKind::Late => vec![ts, tf],
    };
    let fast_tokens = if cfg.kind == FusionKind::Early { ts } else { tf };
    if let Some(f) = cfg.fast_reduced {
        r.entries.push(("fast_reduce".into(), linear_flops(fast_tokens, cfg.fast_dim, f)));
    }
    for (i, (b, len)) in cfg.bert_configs().iter().zip(bert_lens).enumerate() {
        r.extend_prefixed(&format!("bert{i}."), bert_flops(b, len));
    }
    r.entries.push(("classifier".into(), linear_flops(1, cfg.classifier_input_width(), cfg.num_classes)));
    r
}

/// Aligned text table of both reports, joined on component name.
pub fn render_table(title: &str, params: &ParamReport, flops: &FlopReport) -> String {
    let rows = joined(params, flops);
    let width = rows.iter().map(|r| r.0.len()).chain([9, 5]).max().unwrap_or(9);
    let mut s = String::new();
    writeln!(s, "# {title} ({CONVENTION}; input {})", flops.geometry).expect("write");
    writeln!(s, "{:<width$}  {:>14}  {:>16}", "component", "params", "flops").expect("write");
    for (name, p, f) in &rows {
        writeln!(s, "{name:<width$}  {p:>14}  {f:>16}").expect("write");
    }
    writeln!(s, "{:<width$}  {:>14}  {:>16}", "total", params.total(), flops.total()).expect("write");
    s
}

/// `component,params,flops` rows followed by a `total` row.
pub fn render_csv(params: &ParamReport, flops: &FlopReport) -> String {
    let mut s = String::from("component,params,flops\n");
    for (name, p, f) in joined(params, flops) {
        writeln!(s, "{name},{p},{f}").expect("write");
    }
    writeln!(s, "total,{},{}", params.total(), flops.total()).expect("write");
    s
}

fn joined(params: &ParamReport, flops: &FlopReport) -> Vec<(String, u64, u64)> {
    let mut rows: Vec<(String, u64, u64)> = params.entries.iter().map(|(k, v)| (k.clone(), *v, 0)).collect();
    for (k, v) in &flops.entries {
        match rows.iter_mut().find(|r| &r.0 == k) {
            Some(r) => r.2 += v,
            None => rows.push((k.clone(), 0, *v)),
        }
    }
    rows
}
