//! Gradient-check suites over the primitives, the pooling heads and the
//! backbone-plus-head composite, all in double precision.
//!
//! Each loss is a small weighted reduction of the output so that its
//! magnitude stays well below one; finite-difference roundoff then stays far
//! under the relative-error floor for gradients that are zero by symmetry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BlockSpec, ClipModel, StageSpec, ToyBackboneConfig};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::graph::{Graph, Var};
use crate::params::{derive_seed, derive_seed_str, Init, ParamStore};
use crate::pool::{BertPoolerConfig, Head, HeadConfig, PoolerConfig};
use crate::tensor::Tensor;

pub const OPS_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const EPS: f64 = 1e-5;
/// Step for primitives that are at most quadratic in every single input
/// coordinate, where central differences carry no truncation error.
pub const POLY_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Ops,
    Heads,
    End2end,
}

/// Worst result of one component across all seeds.
#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub component: String,
    pub report: GradCheckReport,
    pub tolerance: f64,
    pub seeds: usize,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.report.checked > 0 && self.report.max_rel_error < self.tolerance
    }
}

pub fn run(scope: Scope, seeds: usize, root: u64) -> Result<Vec<SuiteResult>> {
    match scope {
        Scope::Ops => ops_suite(seeds, root),
        Scope::Heads => heads_suite(seeds, root),
        Scope::End2end => end2end_suite(seeds, root),
    }
}

fn normal(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Init::Normal { std }.sample(shape, rng)
}

/// `Σ c ⊙ y` with fixed random weights `c ~ N(0, 0.1²)`.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = normal(g.shape(y), 0.1, &mut rng);
    let prod = g.mul_const(y, c)?;
    Ok(g.sum(prod))
}

type OpCase = (&'static str, f64, Vec<Vec<usize>>, fn(&mut Graph<f64>, &[Var]) -> Result<Var>);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", POLY_EPS, vec![vec![3, 4], vec![4, 2]], |g, v| g.matmul(v[0], v[1])),
        ("matmul_t", POLY_EPS, vec![vec![3, 4], vec![2, 4]], |g, v| g.matmul_t(v[0], v[1])),
        ("transpose", POLY_EPS, vec![vec![3, 2]], |g, v| g.transpose(v[0])),
        ("add", POLY_EPS, vec![vec![2, 3], vec![2, 3]], |g, v| g.add(v[0], v[1])),
        ("sub", POLY_EPS, vec![vec![2, 3], vec![2, 3]], |g, v| g.sub(v[0], v[1])),
        ("mul", POLY_EPS, vec![vec![2, 3], vec![2, 3]], |g, v| g.mul(v[0], v[1])),
        ("add_row", POLY_EPS, vec![vec![3, 4], vec![4]], |g, v| g.add_row(v[0], v[1])),
        ("scale", POLY_EPS, vec![vec![5]], |g, v| Ok(g.scale(v[0], 1.7))),
        ("sum", POLY_EPS, vec![vec![2, 2]], |g, v| {
            let s = g.sum(v[0]);
            let sq = g.mul(s, s)?;
            Ok(sq)
        }),
        ("mean_axis", POLY_EPS, vec![vec![2, 3, 2]], |g, v| g.mean_axis(v[0], 1)),
        ("softmax", EPS, vec![vec![3, 4]], |g, v| g.softmax(v[0], 1)),
        ("softmax_axis0", EPS, vec![vec![3, 4]], |g, v| g.softmax(v[0], 0)),
        ("gelu", EPS, vec![vec![6]], |g, v| Ok(g.gelu(v[0]))),
        ("tanh", EPS, vec![vec![6]], |g, v| Ok(g.tanh(v[0]))),
        ("sigmoid", EPS, vec![vec![6]], |g, v| Ok(g.sigmoid(v[0]))),
        ("layer_norm", EPS, vec![vec![3, 5], vec![5], vec![5]], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
        ("reshape", POLY_EPS, vec![vec![2, 3]], |g, v| g.reshape(v[0], [3, 2])),
        ("concat", POLY_EPS, vec![vec![2, 3], vec![1, 3]], |g, v| g.concat(&[v[0], v[1]], 0)),
        ("concat_axis1", POLY_EPS, vec![vec![2, 3], vec![2, 1]], |g, v| g.concat(&[v[0], v[1]], 1)),
        ("slice", POLY_EPS, vec![vec![4, 3]], |g, v| g.slice(v[0], 0, 1, 2)),
        ("conv3d", POLY_EPS, vec![vec![2, 3, 4, 4], vec![3, 2, 3, 3, 3], vec![3]], |g, v| {
            g.conv3d(v[0], v[1], Some(v[2]), [1, 2, 1], [1, 1, 0])
        }),
        ("cross_entropy", EPS, vec![vec![5]], |g, v| {
            let l = g.cross_entropy(v[0], 2)?;
            Ok(g.scale(l, 0.1))
        }),
    ]
}

/// Every differentiable primitive on random small tensors.
pub fn ops_suite(seeds: usize, root: u64) -> Result<Vec<SuiteResult>> {
    op_cases()
        .into_iter()
        .map(|(name, eps, shapes, f)| {
            let reports = (0..seeds)
                .map(|s| {
                    let seed = derive_seed(derive_seed_str(root, name), &[s as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut store = ParamStore::new();
                    let ids: Vec<_> = shapes
                        .iter()
                        .enumerate()
                        .map(|(i, sh)| store.insert(format!("{name}.arg{i}"), normal(sh, 1.0, &mut rng)))
                        .collect();
                    grad_check(&store, eps, |g| {
                        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
                        let y = f(g, &vars)?;
                        weighted_sum(g, y, seed ^ 1)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SuiteResult {
                component: name.to_string(),
                report: GradCheckReport::combine(reports),
                tolerance: OPS_TOLERANCE,
                seeds,
            })
        })
        .collect()
}

/// A BERT configuration small enough for exhaustive finite differences.
pub fn tiny_bert(d: usize, heads: usize, seq_len: usize) -> BertPoolerConfig {
    BertPoolerConfig {
        num_heads: heads,
        pffn_hidden: Some(2 * d),
        dropout_p: 0.0,
        mask_prob: 0.0,
        max_positions: seq_len,
        embedding_init_std: 0.3,
        linear_init_std: Some(0.3),
        layer_norm_eps: 1e-5,
        ..BertPoolerConfig::new(d)
    }
}

/// The pooler variants exercised by the head suite, at `T = 3`, `D = 4`.
pub fn head_variants() -> Vec<(&'static str, PoolerConfig)> {
    vec![
        ("bert", PoolerConfig::Bert(tiny_bert(4, 2, 3))),
        ("bert_no_cls", PoolerConfig::Bert(BertPoolerConfig { use_cls_token: false, ..tiny_bert(4, 1, 3) })),
        ("bert_2_layers", PoolerConfig::Bert(BertPoolerConfig { num_layers: 2, ..tiny_bert(4, 2, 3) })),
        ("lstm", PoolerConfig::Lstm { hidden: 3, layers: 2 }),
        ("nonlocal_concat_fc", PoolerConfig::NonlocalConcatFc { width: Some(5), budget: None }),
        ("concat_fc", PoolerConfig::ConcatFc { width: Some(5), budget: None }),
        ("concat", PoolerConfig::Concat {}),
        ("avg", PoolerConfig::Avg {}),
    ]
}

/// Scaled cross-entropy of a model's logits.
fn scaled_ce(g: &mut Graph<f64>, logits: Var, label: usize) -> Result<Var> {
    let l = g.cross_entropy(logits, label)?;
    Ok(g.scale(l, 1e-3))
}

pub fn heads_suite(seeds: usize, root: u64) -> Result<Vec<SuiteResult>> {
    let (t, d, c) = (3, 4, 3);
    head_variants()
        .into_iter()
        .map(|(name, pooler)| {
            let cfg = HeadConfig::new(pooler, t, d, c);
            let reports = (0..seeds)
                .map(|s| {
                    let seed = derive_seed(derive_seed_str(root, name), &[s as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut store = ParamStore::new();
                    let head = Head::new(&mut store, "head", &cfg, &mut rng)?;
                    let x = normal(&[t, d], 1.0, &mut rng);
                    let label = s % c;
                    grad_check(&store, EPS, |g| {
                        let xv = g.input(x.clone());
                        let logits = head.logits(g, xv)?;
                        scaled_ce(g, logits, label)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SuiteResult {
                component: name.to_string(),
                report: GradCheckReport::combine(reports),
                tolerance: MODEL_TOLERANCE,
                seeds,
            })
        })
        .collect()
}

/// Tiny backbone: `[1 × 4 × 4 × 4]` clips to `[2 × 4]` features.
pub fn tiny_backbone() -> ToyBackboneConfig {
    ToyBackboneConfig {
        input: [1, 4, 4, 4],
        stages: vec![StageSpec {
            width: 2,
            kernel: [3; 3],
            stride: [1, 2, 2],
        }],
        blocks: vec![BlockSpec {
            mid: 2,
            out: 4,
            stride: [2, 1, 1],
        }],
    }
}

pub fn end2end_suite(seeds: usize, root: u64) -> Result<Vec<SuiteResult>> {
    let bb = tiny_backbone();
    let variants = [
        ("backbone+bert", PoolerConfig::Bert(tiny_bert(4, 2, 2))),
        ("backbone+avg", PoolerConfig::Avg {}),
    ];
    variants
        .into_iter()
        .map(|(name, pooler)| {
            let head = HeadConfig::new(pooler, 0, 0, 2);
            let reports = (0..seeds)
                .map(|s| {
                    let seed = derive_seed(derive_seed_str(root, name), &[s as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut store = ParamStore::new();
                    let model = ClipModel::new(&mut store, &bb, &head, &mut rng)?;
                    let clip = normal(&bb.input, 1.0, &mut rng);
                    grad_check(&store, EPS, |g| {
                        let x = g.input(clip.clone());
                        let logits = model.logits(g, x)?;
                        scaled_ce(g, logits, s % 2)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SuiteResult {
                component: name.to_string(),
                report: GradCheckReport::combine(reports),
                tolerance: MODEL_TOLERANCE,
                seeds,
            })
        })
        .collect()
}
