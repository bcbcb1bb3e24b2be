//! Acceptance checks for the late-pooling library and its command-line driver.
//!
//! Runs as a plain binary (no libtest harness) so every criterion prints its
//! own PASS/FAIL line whether or not output capture is enabled. Pass criterion
//! numbers as arguments to run a subset, e.g.
//! `cargo test -p latepool-cli --test acceptance -- 3 6`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use common::oracle::{dense_nonlocal, max_abs_diff, relative_change, DenseBert, Mat};
use latepool::ablation::{bert_switch_variants, run_ablation, TaskShape};
use latepool::backbone::reduction_presets;
use latepool::data::{gen_bag_task, gen_order_task, gen_two_stream, SyntheticDataset};
use latepool::nn::LinearInit;
use latepool::optim::{AdamWConfig, OptimizerConfig};
use latepool::pool::{
    fuse_scores, BertPooler, BertPoolerConfig, FusionConfig, FusionModel, Head, HeadConfig, NonlocalBlock,
    PoolerConfig, ScoreFusion,
};
use latepool::profile::{backbone_flops, backbone_params, bert_params, head_flops, head_params};
use latepool::suites::{self, Scope};
use latepool::train::{evaluate, train, Split, TrainConfig};
use latepool::{ClassifierOutput, Graph, Init, ParamStore, Tensor, TemporalFeatures};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Pinned tolerances and thresholds
// ---------------------------------------------------------------------------

const LAYER_512: u64 = 3_152_384;
const LAYER_2048: u64 = 50_358_272;
const PAPER_512: f64 = 3.0e6;
const PAPER_2048: f64 = 50.0e6;
const PAPER_REL_TOL: f64 = 0.10;

const GRAD_SEEDS: usize = 10;
const GRAD_ROOT: u64 = 2024;
const OPS_TOL: f64 = 1e-6;
const POOLER_TOL: f64 = 1e-4;

const ORACLE_TOL: f64 = 1e-8;

const ORDER_BERT_MIN: f64 = 0.90;
const ORDER_TGAP_MAX: f64 = 0.60;
const BAG_MIN: f64 = 0.95;
const MAX_EPOCHS: usize = 300;

const FLOP_RATIO_MAX: f64 = 0.01;

const PERMUTATIONS: usize = 20;
const INVARIANT_TOL: f64 = 1e-6;
const SENSITIVE_MIN: f64 = 1e-3;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rows_of(t: &Tensor<f64>) -> Mat {
    let c = t.shape()[1];
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

// ---------------------------------------------------------------------------
// 1. Parameter counts
// ---------------------------------------------------------------------------

/// One layer counted piece by piece: four `D×D` projections with biases,
/// the `D→4D→D` PFFN with biases, and two LayerNorms of `2D` each.
fn layer_count_by_parts(d: u64) -> u64 {
    let attention = 4 * (d * d + d);
    let pffn = (d * 4 * d + 4 * d) + (4 * d * d + d);
    let norms = 2 * (2 * d);
    attention + pffn + norms
}

fn layer_params_from_store(d: usize) -> u64 {
    let cfg = BertPoolerConfig { use_cls_token: false, use_positional: false, ..BertPoolerConfig::new(d) };
    let mut store = ParamStore::<f32>::new();
    BertPooler::new(&mut store, "bert", &cfg, &mut rng(1)).expect("build");
    store.num_scalars()
}

fn criterion_1() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (d, expected, paper) in [(512usize, LAYER_512, PAPER_512), (2048, LAYER_2048, PAPER_2048)] {
        let cfg = BertPoolerConfig::new(d);
        let formula = cfg.layer_params();
        let parts = layer_count_by_parts(d as u64);
        let stored = layer_params_from_store(d);
        let profiled: u64 = bert_params(&cfg)
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with("layer"))
            .map(|(_, v)| v)
            .sum();
        let rel = (formula as f64 - paper).abs() / paper;
        ok &= formula == expected && parts == expected && stored == expected && profiled == expected;
        ok &= rel <= PAPER_REL_TOL;
        notes.push(format!("D={d}: {formula} (store {stored}, profiler {profiled}), {:.1}% from paper", 100.0 * rel));
    }
    check(ok, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 2. Gradient validation
// ---------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let ops = suites::run(Scope::Ops, GRAD_SEEDS, GRAD_ROOT).map_err(|e| e.to_string())?;
    let heads = suites::run(Scope::Heads, GRAD_SEEDS, GRAD_ROOT).map_err(|e| e.to_string())?;
    let worst_ops = ops.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
    let mut ok = ops.iter().all(|r| r.report.checked > 0 && r.report.max_rel_error < OPS_TOL);
    let required = ["bert", "lstm", "nonlocal_concat_fc", "concat_fc"];
    for name in required {
        ok &= heads.iter().any(|r| r.component == name);
    }
    ok &= heads.iter().all(|r| r.report.checked > 0 && r.report.max_rel_error < POOLER_TOL);
    let failing: Vec<String> = ops
        .iter()
        .filter(|r| r.report.max_rel_error >= OPS_TOL)
        .chain(heads.iter().filter(|r| r.report.max_rel_error >= POOLER_TOL))
        .map(|r| format!("{}={:.2e}", r.component, r.report.max_rel_error))
        .collect();
    let heads_desc: Vec<String> = heads.iter().map(|r| format!("{} {:.1e}", r.component, r.report.max_rel_error)).collect();
    check(
        ok,
        format!(
            "{} ops worst {worst_ops:.2e} (< {OPS_TOL:e}); poolers {} (< {POOLER_TOL:e}); {} seeds{}",
            ops.len(),
            heads_desc.join(", "),
            GRAD_SEEDS,
            if failing.is_empty() { String::new() } else { format!("; failing {}", failing.join(" ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Dense oracle equivalence
// ---------------------------------------------------------------------------

fn oracle_bert_case(t: usize, d: usize, heads: usize, cls: bool, positional: bool, masked: &[usize], seed: u64) -> f64 {
    let cfg = BertPoolerConfig {
        num_heads: heads,
        use_cls_token: cls,
        use_positional: positional,
        max_positions: 3,
        dropout_p: 0.0,
        mask_prob: 0.0,
        embedding_init_std: 0.7,
        linear_init_std: Some(0.7),
        layer_norm_eps: 1e-6,
        ..BertPoolerConfig::new(d)
    };
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(seed);
    let pooler = BertPooler::new(&mut store, "bert", &cfg, &mut r).expect("build");
    // Perturb the LayerNorm affine parameters away from their (1, 0) init.
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains(".ln") {
            let shape = store.get(id).shape().to_vec();
            let noise: Tensor<f64> = Init::Normal { std: 0.3 }.sample(&shape, &mut r);
            let base = store.get(id).clone();
            let v = Tensor::new(shape, base.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect()).unwrap();
            store.set(id, v);
        }
    }
    let x: Tensor<f64> = Init::Normal { std: 1.0 }.sample(&[t, d], &mut r);
    let mut g = Graph::new(&store);
    let xv = g.input(x.clone());
    let out = pooler.forward_masked(&mut g, xv, masked).expect("forward");
    let ours = g.value(out.y_cls).data().to_vec();
    let dense = DenseBert::load(&store, "bert", 1, heads, cfg.layer_norm_eps).y_cls(&rows_of(&x), masked);
    max_abs_diff(&ours, &dense)
}

fn criterion_3() -> Outcome {
    let mut worst_bert = 0.0f64;
    let mut cases = 0;
    let mut seed = 300;
    for t in 1..=3 {
        for d in [2usize, 4] {
            for heads in [1usize, 2] {
                for cls in [true, false] {
                    for positional in [true, false] {
                        let mask_sets: Vec<Vec<usize>> = vec![vec![], vec![1], (1..=t).collect()];
                        for m in &mask_sets {
                            seed += 1;
                            worst_bert = worst_bert.max(oracle_bert_case(t, d, heads, cls, positional, m, seed));
                            cases += 1;
                        }
                    }
                }
            }
        }
    }
    let mut worst_nl = 0.0f64;
    for d in [2usize, 4] {
        for s in 0..5 {
            let mut store = ParamStore::<f64>::new();
            let mut r = rng(900 + s);
            let nl = NonlocalBlock::new(&mut store, "nl", d, LinearInit::Normal(0.7), &mut r).expect("build");
            let x: Tensor<f64> = Init::Normal { std: 1.0 }.sample(&[3, d], &mut r);
            let mut g = Graph::new(&store);
            let xv = g.input(x.clone());
            let y = nl.forward(&mut g, xv).expect("forward");
            let ours = g.value(y).data().to_vec();
            let dense: Vec<f64> = dense_nonlocal(&store, "nl", &rows_of(&x)).concat();
            worst_nl = worst_nl.max(max_abs_diff(&ours, &dense));
        }
    }
    check(
        worst_bert < ORACLE_TOL && worst_nl < ORACLE_TOL,
        format!("bert_pool {cases} cases max |diff| {worst_bert:.2e}; nonlocal max |diff| {worst_nl:.2e} (tol {ORACLE_TOL:e})"),
    )
}

// ---------------------------------------------------------------------------
// 4. Order-sensitivity separation
// ---------------------------------------------------------------------------

const N_TRAIN: usize = 2000;
const N_TEST: usize = 500;
const SEQ: usize = 8;
const DIM: usize = 16;
const DATA_SEED: u64 = 7;

type Samples = Vec<(TemporalFeatures<f64>, usize)>;

fn split(ds: &SyntheticDataset) -> (Samples, Samples) {
    let mut all = ds.samples::<f64>();
    let test = all.split_off(N_TRAIN);
    (all, test)
}

fn fit(pooler: PoolerConfig, ds: &SyntheticDataset, stop_at: Option<f64>) -> (f64, usize) {
    let (train_set, test_set) = split(ds);
    let hc = HeadConfig::new(pooler, SEQ, DIM, 2);
    let mut store = ParamStore::<f64>::new();
    let head = Head::new(&mut store, "head", &hc, &mut rng(DATA_SEED)).expect("head");
    let cfg = TrainConfig {
        epochs: MAX_EPOCHS,
        batch_size: 32,
        seed: DATA_SEED,
        optimizer: OptimizerConfig::Adamw(AdamWConfig { lr: 1e-3, ..Default::default() }),
        scheduler: None,
        stop_at_top1: stop_at,
    };
    let h = train(&head, &mut store, &train_set, &test_set, &cfg).expect("train");
    let last = h.last(Split::Test).expect("test record");
    (last.top1, h.epochs())
}

fn criterion_4() -> Outcome {
    let order = gen_order_task(N_TRAIN + N_TEST, SEQ, DIM, DATA_SEED).map_err(|e| e.to_string())?;
    let bag = gen_bag_task(N_TRAIN + N_TEST, SEQ, DIM, DATA_SEED).map_err(|e| e.to_string())?;
    let bert = PoolerConfig::Bert(BertPoolerConfig { num_heads: 4, use_positional: true, ..BertPoolerConfig::new(DIM) });
    let (ob, ob_e) = fit(bert.clone(), &order, Some(0.95));
    let (oa, oa_e) = fit(PoolerConfig::Avg {}, &order, None);
    let (bb, bb_e) = fit(bert, &bag, Some(0.99));
    let (ba, ba_e) = fit(PoolerConfig::Avg {}, &bag, Some(0.99));
    check(
        ob >= ORDER_BERT_MIN && oa <= ORDER_TGAP_MAX && bb >= BAG_MIN && ba >= BAG_MIN,
        format!(
            "order: bert {ob:.3} ({ob_e} ep, >= {ORDER_BERT_MIN}), tgap {oa:.3} ({oa_e} ep, <= {ORDER_TGAP_MAX}); \
             bag: bert {bb:.3} ({bb_e} ep), tgap {ba:.3} ({ba_e} ep) (>= {BAG_MIN})"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. BERT switches through the ablation harness
// ---------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let order = gen_order_task(N_TRAIN + N_TEST, SEQ, DIM, DATA_SEED).map_err(|e| e.to_string())?;
    let (train_set, test_set) = split(&order);
    let variants = bert_switch_variants(&BertPoolerConfig::new(DIM));
    let shape = TaskShape { seq_len: SEQ, feature_dim: DIM, num_classes: 2 };
    let cfg = TrainConfig { epochs: 5, batch_size: 32, seed: 11, ..Default::default() };
    let rows = run_ablation(&variants, shape, &train_set, &test_set, &cfg);
    let mut ok = rows.len() == 4 && rows.iter().all(|r| r.error.is_none() && r.top1.is_some());
    for (row, v) in rows.iter().zip(&variants) {
        let hc = HeadConfig::new(v.pooler.clone(), SEQ, DIM, 2);
        ok &= row.params == head_params(&hc).ok().map(|r| r.total());
    }
    let param = |name: &str| rows.iter().find(|r| r.name == name).and_then(|r| r.params);
    let diff = match (param("L1-H8-cls"), param("L1-H8-pooled")) {
        (Some(a), Some(b)) => a as i64 - b as i64,
        _ => i64::MIN,
    };
    ok &= diff == DIM as i64;
    let desc: Vec<String> = rows
        .iter()
        .map(|r| format!("{} params {} top1 {}", r.name, r.params.unwrap_or(0), r.top1.map_or("-".into(), |t| format!("{t:.3}"))))
        .collect();
    check(ok, format!("{}; cls on minus off = {diff} (expected {DIM})", desc.join(", ")))
}

// ---------------------------------------------------------------------------
// 6. Masking contract
// ---------------------------------------------------------------------------

fn values_row_grad(masked: &[usize], row: usize, seed: u64) -> Vec<f64> {
    let cfg = BertPoolerConfig {
        num_heads: 2,
        num_layers: 2,
        max_positions: 5,
        dropout_p: 0.0,
        mask_prob: 0.0,
        embedding_init_std: 0.5,
        linear_init_std: Some(0.5),
        ..BertPoolerConfig::new(8)
    };
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(seed);
    let head_cfg = HeadConfig::new(PoolerConfig::Bert(cfg.clone()), 5, 8, 3);
    let head = Head::new(&mut store, "head", &head_cfg, &mut r).expect("head");
    let pooler = match &head.pooler {
        latepool::pool::Pooler::Bert(b) => b.clone(),
        _ => unreachable!(),
    };
    let x: Tensor<f64> = Init::Normal { std: 1.0 }.sample(&[5, 8], &mut r);
    let mut g = Graph::new(&store);
    let xv = g.input(x);
    let out = pooler.forward_masked(&mut g, xv, masked).expect("forward");
    let logits = latepool::pool::classify(&mut g, out.y_cls, &head.classifier).expect("classify");
    let loss = g.cross_entropy(logits, 1).expect("loss");
    let grads = g.backward_full(loss).expect("backward");
    let mut all = Vec::new();
    for trace in &out.layers {
        let gv = grads.of(trace.values).expect("gradient of values");
        all.extend_from_slice(&gv.data()[row * 8..(row + 1) * 8]);
    }
    all
}

fn criterion_6() -> Outcome {
    let mut max_masked = 0.0f64;
    let mut min_unmasked = f64::INFINITY;
    for (seed, masked) in [(1u64, vec![2usize]), (2, vec![1, 4]), (3, vec![5]), (4, vec![1, 2, 3, 4, 5])] {
        for &row in &masked {
            let gm = values_row_grad(&masked, row, seed);
            max_masked = max_masked.max(gm.iter().map(|v| v.abs()).fold(0.0, f64::max));
            let gu = values_row_grad(&[], row, seed);
            min_unmasked = min_unmasked.min(gu.iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
    }
    check(
        max_masked == 0.0 && min_unmasked > 0.0,
        format!("masked rows max |grad| = {max_masked:e} (exactly 0 required); unmasked rows min max|grad| = {min_unmasked:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 7. Reduction ordering and head cost
// ---------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for preset in reduction_presets() {
        let [orig, frmb, frab] = preset.variants().map_err(|e| e.to_string())?;
        let count = |c: &latepool::backbone::ToyBackboneConfig| backbone_params(c).map(|r| r.total()).unwrap_or(0);
        let (po, pm, pa) = (count(&orig.1), count(&frmb.1), count(&frab.1));
        ok &= pm < po && po < pa && pm > 0;
        let mut worst_ratio = 0.0f64;
        for (_, bb) in [&frmb, &frab] {
            let t_out = bb.output_len().map_err(|e| e.to_string())?;
            let hc = HeadConfig::new(
                PoolerConfig::Bert(BertPoolerConfig::new(preset.reduced_dim)),
                t_out,
                preset.reduced_dim,
                51,
            );
            let head = head_flops(&hc).map_err(|e| e.to_string())?.total() as f64;
            let body = backbone_flops(bb).map_err(|e| e.to_string())?.total() as f64;
            worst_ratio = worst_ratio.max(head / body);
        }
        ok &= worst_ratio < FLOP_RATIO_MAX;
        notes.push(format!("{}: FRMB {pm} < original {po} < FRAB {pa}, head/backbone <= {:.3}%", preset.name, 100.0 * worst_ratio));
    }
    check(ok, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 8. Two-stream fusion
// ---------------------------------------------------------------------------

fn criterion_8() -> Outcome {
    let slow_len = 4;
    let early = FusionConfig::paper_early(slow_len, 2);
    let late = FusionConfig::paper_late(slow_len, 2);
    let (we, wl) = (early.classifier_input_width(), late.classifier_input_width());
    let mut ok = we == 640 && wl == 768;
    let data = gen_two_stream::<f64>(6, slow_len, 4, 2048, 256, 5).map_err(|e| e.to_string())?;
    ok &= data.iter().all(|(x, _)| x.fast.len() == 4 * x.slow.len());
    let mut runs = Vec::new();
    for cfg in [&early, &late] {
        let mut store = ParamStore::<f64>::new();
        let model = FusionModel::new(&mut store, "fusion", cfg, &mut rng(3)).map_err(|e| e.to_string())?;
        ok &= store.num_scalars() == cfg.num_params();
        let tc = TrainConfig { epochs: 1, batch_size: 3, seed: 3, ..Default::default() };
        let h = train(&model, &mut store, &data[..3], &data[3..], &tc).map_err(|e| e.to_string())?;
        let m = evaluate(&model, &store, &data).map_err(|e| e.to_string())?;
        ok &= h.epochs() == 1 && m.loss.is_finite();
        runs.push(format!("{:?} loss {:.3}", cfg.kind, m.loss));
    }
    let a = ClassifierOutput::new(vec![1.0, 2.0, 3.0]).unwrap();
    let b = ClassifierOutput::new(vec![3.0, -2.0, 0.5]).unwrap();
    let mean = fuse_scores(&[a.clone(), b.clone()], ScoreFusion::Mean).map_err(|e| e.to_string())?;
    let sum = fuse_scores(&[a.clone(), b], ScoreFusion::Sum).map_err(|e| e.to_string())?;
    ok &= mean.logits == vec![2.0, 0.0, 1.75] && sum.logits == vec![4.0, 0.0, 3.5];
    ok &= mean.predicted() == 0;
    let short = ClassifierOutput::new(vec![1.0]).unwrap();
    ok &= fuse_scores(&[a, short], ScoreFusion::Mean).is_err();
    check(ok, format!("widths early {we} late {wl}; {}; fuse mean {:?} sum {:?}", runs.join(", "), mean.logits, sum.logits))
}

// ---------------------------------------------------------------------------
// 9. CLI determinism
// ---------------------------------------------------------------------------

fn cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_latepool"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

const RUN_CONFIG: &str = r#"{
  "seed": 5,
  "data": { "generate": { "task": "order", "n_train": 64, "n_test": 32, "t": 6, "d": 8, "seed": 9 } },
  "pooler": { "kind": "bert", "num_heads": 2, "max_positions": 8 },
  "train": { "epochs": 3, "batch_size": 16 }
}"#;

const ABLATE_CONFIG: &str = r#"{
  "seed": 5,
  "data": { "generate": { "task": "order", "n_train": 48, "n_test": 16, "t": 4, "d": 8, "seed": 9 } },
  "sweep": "poolers",
  "bert": { "num_heads": 2 },
  "train": { "epochs": 2, "batch_size": 16 }
}"#;

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    std::fs::write(dir.join("run.json"), RUN_CONFIG).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("ablate.json"), ABLATE_CONFIG).map_err(|e| e.to_string())?;
    let mut compared = Vec::new();
    let mut ok = true;
    for run in ["a", "b"] {
        cli(&["gen", "--task", "order", "--n", "100", "--t", "8", "--d", "16", "--seed", "7", "--out", &format!("{run}/data.tpf")], dir)?;
        cli(&["train", "--config", "run.json", "--out", &format!("{run}/train")], dir)?;
        cli(&["ablate", "--config", "ablate.json", "--out", &format!("{run}/ablate")], dir)?;
        cli(&["profile", "--out", &format!("{run}/profile")], dir)?;
    }
    for file in ["data.tpf", "train/metrics.csv", "ablate/ablation.csv", "ablate/ablation.txt", "profile/profile.csv"] {
        let a = std::fs::read(dir.join("a").join(file)).map_err(|e| format!("{file}: {e}"))?;
        let b = std::fs::read(dir.join("b").join(file)).map_err(|e| format!("{file}: {e}"))?;
        ok &= a == b && !a.is_empty();
        compared.push(format!("{file} {}", if a == b { "identical" } else { "DIFFERS" }));
    }
    check(ok, compared.join(", "))
}

// ---------------------------------------------------------------------------
// 10. Permutation behaviour
// ---------------------------------------------------------------------------

fn pooled(head: &Head, store: &ParamStore<f64>, x: &TemporalFeatures<f64>) -> Vec<f64> {
    let mut g = Graph::new(store);
    let xv = x.input(&mut g);
    let y = head.pool(&mut g, xv).expect("pool");
    g.value(y).data().to_vec()
}

fn permutation_spread(pooler: PoolerConfig, seed: u64) -> (f64, f64) {
    let (t, d) = (6, 8);
    let mut store = ParamStore::<f64>::new();
    let mut r = rng(seed);
    let head = Head::new(&mut store, "head", &HeadConfig::new(pooler, t, d, 3), &mut r).expect("head");
    let x = TemporalFeatures::new(Init::Normal { std: 1.0 }.sample(&[t, d], &mut r)).unwrap();
    let base = pooled(&head, &store, &x);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut perm: Vec<usize> = (0..t).collect();
    for _ in 0..PERMUTATIONS {
        loop {
            perm.shuffle(&mut r);
            if perm.iter().enumerate().any(|(i, &p)| i != p) {
                break;
            }
        }
        let y = pooled(&head, &store, &x.permuted(&perm).unwrap());
        let c = relative_change(&base, &y);
        lo = lo.min(c);
        hi = hi.max(c);
    }
    (lo, hi)
}

fn criterion_10() -> Outcome {
    let bert = |positional| {
        PoolerConfig::Bert(BertPoolerConfig {
            num_heads: 2,
            use_positional: positional,
            mask_prob: 0.0,
            dropout_p: 0.0,
            max_positions: 6,
            embedding_init_std: 0.5,
            linear_init_std: Some(0.3),
            ..BertPoolerConfig::new(8)
        })
    };
    let invariant = [("bert positional off", bert(false)), ("tgap", PoolerConfig::Avg {})];
    let sensitive = [
        ("concat", PoolerConfig::Concat {}),
        ("lstm", PoolerConfig::Lstm { hidden: 6, layers: 1 }),
        ("bert positional on", bert(true)),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, p) in invariant {
        let (_, hi) = permutation_spread(p, 77);
        ok &= hi <= INVARIANT_TOL;
        notes.push(format!("{name} max {hi:.1e}"));
    }
    for (name, p) in sensitive {
        let (_, hi) = permutation_spread(p, 78);
        ok &= hi > SENSITIVE_MIN;
        notes.push(format!("{name} max {hi:.2e}"));
    }
    check(ok, format!("{PERMUTATIONS} permutations: {}", notes.join(", ")))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "parameter counts", criterion_1),
        (2, "gradient checks", criterion_2),
        (3, "dense oracle equivalence", criterion_3),
        (4, "order-sensitivity separation", criterion_4),
        (5, "BERT switch ablation", criterion_5),
        (6, "masking contract", criterion_6),
        (7, "reduction ordering and head cost", criterion_7),
        (8, "two-stream fusion", criterion_8),
        (9, "CLI determinism", criterion_9),
        (10, "permutation behaviour", criterion_10),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (n, title, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS  {title} [{secs:.1}s]: {d}"),
            Err(d) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {title} [{secs:.1}s]: {d}");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
