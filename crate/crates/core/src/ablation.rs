//! Train several pooler variants under one seed and budget and tabulate them.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{derive_seed_str, ParamStore};
use crate::pool::{BertPoolerConfig, Head, HeadConfig, PoolerConfig, TemporalFeatures};
use crate::profile::{head_flops, head_params};
use crate::train::{train, Sample, Split, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub pooler: PoolerConfig,
}

impl Variant {
    pub fn new(name: impl Into<String>, pooler: PoolerConfig) -> Self {
        Self {
            name: name.into(),
            pooler,
        }
    }
}

/// The pooler comparison: average, concatenation, LSTM, concatenation with
/// a budget-matched FC, non-local with concatenation and FC, and BERT.
pub fn pooler_variants(bert: &BertPoolerConfig) -> Vec<Variant> {
    vec![
        Variant::new("avg", PoolerConfig::Avg {}),
        Variant::new("concat", PoolerConfig::Concat {}),
        Variant::new("lstm", PoolerConfig::lstm()),
        Variant::new("concat_fc", PoolerConfig::concat_fc()),
        Variant::new("nonlocal_concat_fc", PoolerConfig::nonlocal_concat_fc()),
        Variant::new("bert", PoolerConfig::Bert(bert.clone())),
    ]
}

/// The BERT switches: pooled seed instead of a classification token, one
/// head, eight heads, and two layers.
pub fn bert_switch_variants(bert: &BertPoolerConfig) -> Vec<Variant> {
    let with = |layers, heads, cls| {
        PoolerConfig::Bert(BertPoolerConfig {
            num_layers: layers,
            num_heads: heads,
            use_cls_token: cls,
            ..bert.clone()
        })
    };
    vec![
        Variant::new("L1-H8-pooled", with(1, 8, false)),
        Variant::new("L1-H1-cls", with(1, 1, true)),
        Variant::new("L1-H8-cls", with(1, 8, true)),
        Variant::new("L2-H8-cls", with(2, 8, true)),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub kind: String,
    pub params: Option<u64>,
    pub flops: Option<u64>,
    pub top1: Option<f64>,
    pub error: Option<String>,
}

/// Shape of the features every variant is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskShape {
    pub seq_len: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
}

fn run_variant(
    v: &Variant,
    shape: TaskShape,
    train_set: &[Sample<TemporalFeatures<f64>>],
    test_set: &[Sample<TemporalFeatures<f64>>],
    cfg: &TrainConfig,
) -> Result<AblationRow> {
    let hc = HeadConfig::new(v.pooler.clone(), shape.seq_len, shape.feature_dim, shape.num_classes);
    hc.validate()?;
    let params = head_params(&hc)?.total();
    let flops = head_flops(&hc)?.total();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(cfg.seed, "init"));
    let head = Head::new(&mut store, "head", &hc, &mut rng)?;
    if store.num_scalars() != params {
        return Err(Error::contract(format!(
            "{}: profiler counts {params} parameters, model holds {}",
            v.name,
            store.num_scalars()
        )));
    }
    let history = train(&head, &mut store, train_set, test_set, cfg)?;
    let top1 = history.last(Split::Test).or(history.last(Split::Train)).map(|r| r.top1);
    Ok(AblationRow {
        name: v.name.clone(),
        kind: v.pooler.kind().to_string(),
        params: Some(params),
        flops: Some(flops),
        top1,
        error: None,
    })
}

/// Train every variant with the same configuration; failures are recorded
/// per row and do not stop the others. Variants run in parallel.
pub fn run_ablation(
    variants: &[Variant],
    shape: TaskShape,
    train_set: &[Sample<TemporalFeatures<f64>>],
    test_set: &[Sample<TemporalFeatures<f64>>],
    cfg: &TrainConfig,
) -> Vec<AblationRow> {
    variants
        .par_iter()
        .map(|v| {
            run_variant(v, shape, train_set, test_set, cfg).unwrap_or_else(|e| AblationRow {
                name: v.name.clone(),
                kind: v.pooler.kind().to_string(),
                params: None,
                flops: None,
                top1: None,
                error: Some(e.to_string()),
            })
        })
        .collect()
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

pub fn render_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("pooler,kind,params,flops,top1,error\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(s, "{},{},{},{},{},{}", r.name, r.kind, opt(&r.params), opt(&r.flops), opt(&r.top1), err)
            .expect("write");
    }
    s
}

pub fn render_table(rows: &[AblationRow]) -> String {
    let w = rows.iter().map(|r| r.name.len()).chain([6]).max().unwrap_or(6);
    let mut s = String::new();
    writeln!(s, "{:<w$}  {:<18}  {:>12}  {:>14}  {:>7}", "pooler", "kind", "params", "flops", "top1").expect("write");
    for r in rows {
        let top1 = r.top1.map_or_else(|| "-".to_string(), |t| format!("{t:.4}"));
        write!(s, "{:<w$}  {:<18}  {:>12}  {:>14}  {:>7}", r.name, r.kind, opt(&r.params), opt(&r.flops), top1)
            .expect("write");
        if let Some(e) = &r.error {
            write!(s, "  error: {e}").expect("write");
        }
        s.push('\n');
    }
    s
}
