use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use latepool::ablation::{self, bert_switch_variants, pooler_variants, TaskShape, Variant};
use latepool::backbone::{apply_reduction, reduction_presets};
use latepool::data::{gen_task, read_dataset, write_dataset, SyntheticDataset, TaskKind};
use latepool::pool::{BertPoolerConfig, FusionConfig, Head, HeadConfig};
use latepool::profile::{self, FlopReport, ParamReport};
use latepool::suites::{self, Scope};
use latepool::train::{train, Split};
use latepool::{derive_seed_str, ParamStore, TemporalFeatures};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{DataSource, ProfileConfig, RunConfig, Sweep};
use crate::Invalid;

type Samples = Vec<(TemporalFeatures<f64>, usize)>;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn out_dir(out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn balance(ds: &SyntheticDataset) -> String {
    ds.class_balance().iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>().join("/")
}

pub fn gen(task: TaskKind, n: usize, t: usize, d: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = gen_task(task, n, t, d, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_dataset(&ds, out)?;
    println!(
        "wrote {}: task {task:?}, N={}, T={}, D={}, seed {seed}, class balance {}",
        out.display(),
        ds.len(),
        ds.seq_len,
        ds.dim,
        balance(&ds)
    );
    Ok(())
}

struct Data {
    train: Samples,
    test: Samples,
    shape: TaskShape,
}

fn load_data(src: &DataSource) -> Result<Data> {
    let (train_ds, test_ds) = match src {
        DataSource::Files { train, test } => (read_dataset(train)?, read_dataset(test)?),
        DataSource::Generate(g) => {
            let all = gen_task(g.task, g.n_train + g.n_test, g.t, g.d, g.seed)?;
            if g.n_train == 0 || g.n_test == 0 {
                bail!(Invalid("n_train and n_test must both be positive".into()));
            }
            (all.subset(0..g.n_train)?, all.subset(g.n_train..g.n_train + g.n_test)?)
        }
    };
    if (train_ds.seq_len, train_ds.dim, train_ds.n_classes) != (test_ds.seq_len, test_ds.dim, test_ds.n_classes) {
        bail!(Invalid(format!(
            "train and test sets disagree: T={} D={} C={} vs T={} D={} C={}",
            train_ds.seq_len, train_ds.dim, train_ds.n_classes, test_ds.seq_len, test_ds.dim, test_ds.n_classes
        )));
    }
    let shape = TaskShape {
        seq_len: train_ds.seq_len,
        feature_dim: train_ds.dim,
        num_classes: train_ds.n_classes as usize,
    };
    Ok(Data {
        train: train_ds.samples(),
        test: test_ds.samples(),
        shape,
    })
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let Some(pooler) = cfg.pooler.clone() else {
        bail!(Invalid("train needs a \"pooler\" section".into()));
    };
    let tc = cfg.train.with_seed(cfg.seed);
    tc.validate()?;
    let data = load_data(&cfg.data)?;
    let hc = HeadConfig::new(pooler, data.shape.seq_len, data.shape.feature_dim, data.shape.num_classes);
    hc.validate()?;
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_str(cfg.seed, "init"));
    let head = Head::new(&mut store, "head", &hc, &mut rng)?;
    let history = train(&head, &mut store, &data.train, &data.test, &tc)?;

    let dir = out_dir(&cfg.out);
    create_dir(&dir)?;
    let csv = dir.join("metrics.csv");
    history.write_csv(&csv)?;
    let fmt = |s: Split| history.last(s).map_or("-".to_string(), |r| format!("loss {:.4} top1 {:.4}", r.loss, r.top1));
    println!(
        "{} head: {} parameters, {} epochs; train {}; test {}; wrote {}",
        hc.pooler.kind(),
        head.num_params(),
        history.epochs(),
        fmt(Split::Train),
        fmt(Split::Test),
        csv.display()
    );
    Ok(())
}

fn ablation_variants(cfg: &RunConfig, d: usize) -> Result<Vec<Variant>> {
    let template = BertPoolerConfig {
        d_model: d,
        ..cfg.bert.clone().unwrap_or_else(|| BertPoolerConfig::new(d))
    };
    match (&cfg.variants, cfg.sweep) {
        (Some(v), None) if !v.is_empty() => Ok(v.clone()),
        (None, Some(Sweep::Poolers)) => Ok(pooler_variants(&template)),
        (None, Some(Sweep::BertSwitches)) => Ok(bert_switch_variants(&template)),
        (Some(_), Some(_)) => bail!(Invalid("give either \"variants\" or \"sweep\", not both".into())),
        _ => bail!(Invalid("ablate needs a non-empty \"variants\" list or a \"sweep\"".into())),
    }
}

pub fn ablate_cmd(cfg: &RunConfig) -> Result<()> {
    let tc = cfg.train.with_seed(cfg.seed);
    tc.validate()?;
    let data = load_data(&cfg.data)?;
    let variants = ablation_variants(cfg, data.shape.feature_dim)?;
    let rows = ablation::run_ablation(&variants, data.shape, &data.train, &data.test, &tc);

    let dir = out_dir(&cfg.out);
    create_dir(&dir)?;
    let table = ablation::render_table(&rows);
    write_file(&dir.join("ablation.csv"), &ablation::render_csv(&rows))?;
    write_file(&dir.join("ablation.txt"), &table)?;
    print!("{table}");
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed == rows.len() {
        bail!("every ablation variant failed");
    }
    Ok(())
}

/// Returns whether every component passed.
pub fn gradcheck_cmd(scopes: &[Scope], seeds: usize, root: u64) -> Result<bool> {
    if seeds == 0 {
        bail!(Invalid("--seeds must be positive".into()));
    }
    let mut all_passed = true;
    println!("{:<8}  {:<20}  {:>12}  {:>9}  result", "scope", "component", "max_rel_err", "tolerance");
    for &scope in scopes {
        for r in suites::run(scope, seeds, root)? {
            let ok = r.passed();
            all_passed &= ok;
            println!(
                "{:<8}  {:<20}  {:>12.3e}  {:>9.0e}  {}",
                format!("{scope:?}").to_lowercase(),
                r.component,
                r.report.max_rel_error,
                r.tolerance,
                if ok { "PASS" } else { "FAIL" }
            );
        }
    }
    Ok(all_passed)
}

/// Sequence length used by the standalone BERT presets.
const PRESET_SEQ_LEN: usize = 4;
const PRESET_CLASSES: usize = 51;

struct Profiled {
    name: String,
    params: ParamReport,
    flops: FlopReport,
}

fn bert_preset(d: usize) -> Profiled {
    let cfg = BertPoolerConfig::new(d);
    Profiled {
        name: format!("bert-{d}"),
        params: profile::bert_params(&cfg),
        flops: profile::bert_flops(&cfg, PRESET_SEQ_LEN),
    }
}

fn builtin_presets() -> Result<Vec<Profiled>> {
    let mut out = vec![bert_preset(512), bert_preset(2048)];
    let preset = &reduction_presets()[0];
    for (mode, bb) in preset.variants()? {
        let name = format!("backbone-{}", format!("{mode:?}").to_lowercase());
        out.push(Profiled {
            name,
            params: profile::backbone_params(&bb)?,
            flops: profile::backbone_flops(&bb)?,
        });
    }
    for (name, cfg) in [
        ("fusion-early", FusionConfig::paper_early(PRESET_SEQ_LEN, PRESET_CLASSES)),
        ("fusion-late", FusionConfig::paper_late(PRESET_SEQ_LEN, PRESET_CLASSES)),
    ] {
        out.push(Profiled {
            name: name.into(),
            params: profile::fusion_params(&cfg),
            flops: profile::fusion_flops(&cfg),
        });
    }
    Ok(out)
}

pub const PRESET_NAMES: [&str; 7] = [
    "bert-512",
    "bert-2048",
    "backbone-original",
    "backbone-frmb",
    "backbone-frab",
    "fusion-early",
    "fusion-late",
];

pub fn profile_cmd(cfg: &ProfileConfig) -> Result<()> {
    for p in &cfg.presets {
        if !PRESET_NAMES.contains(&p.as_str()) {
            bail!(Invalid(format!("unknown preset {p:?}; expected one of {}", PRESET_NAMES.join(", "))));
        }
    }
    let custom = !cfg.heads.is_empty() || !cfg.backbones.is_empty();
    let mut reports: Vec<Profiled> = builtin_presets()?
        .into_iter()
        .filter(|p| if cfg.presets.is_empty() { !custom } else { cfg.presets.contains(&p.name) })
        .collect();
    for h in &cfg.heads {
        h.head.validate()?;
        reports.push(Profiled {
            name: h.name.clone(),
            params: profile::head_params(&h.head)?,
            flops: profile::head_flops(&h.head)?,
        });
    }
    for b in &cfg.backbones {
        let bb = match &b.reduction {
            Some(spec) => apply_reduction(&b.backbone, spec)?,
            None => b.backbone.clone(),
        };
        reports.push(Profiled {
            name: b.name.clone(),
            params: profile::backbone_params(&bb)?,
            flops: profile::backbone_flops(&bb)?,
        });
    }

    let mut csv = String::from("preset,component,params,flops\n");
    let mut text = String::new();
    for r in &reports {
        for line in profile::render_csv(&r.params, &r.flops).lines().skip(1) {
            writeln!(csv, "{},{line}", r.name).expect("write");
        }
        text.push_str(&profile::render_table(&r.name, &r.params, &r.flops));
        text.push('\n');
    }
    let dir = out_dir(&cfg.out);
    create_dir(&dir)?;
    write_file(&dir.join("profile.csv"), &csv)?;
    write_file(&dir.join("profile.txt"), &text)?;
    print!("{text}");
    Ok(())
}
