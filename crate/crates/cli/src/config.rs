use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use latepool::ablation::Variant;
use latepool::backbone::{ToyBackboneConfig, UnitBlockSpec};
use latepool::data::TaskKind;
use latepool::optim::{OptimizerConfig, PlateauConfig};
use latepool::pool::{BertPoolerConfig, HeadConfig, PoolerConfig};
use latepool::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

use crate::Invalid;

/// Where the features come from.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Files { train: PathBuf, test: PathBuf },
    Generate(GenerateSpec),
}

/// Draws `n_train + n_test` samples with one seed; the first `n_train` train.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub task: TaskKind,
    pub n_train: usize,
    pub n_test: usize,
    pub t: usize,
    pub d: usize,
    pub seed: u64,
}

/// Training settings; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub scheduler: Option<PlateauConfig>,
    pub stop_at_top1: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            optimizer: t.optimizer,
            scheduler: t.scheduler,
            stop_at_top1: t.stop_at_top1,
        }
    }
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            optimizer: self.optimizer,
            scheduler: self.scheduler,
            stop_at_top1: self.stop_at_top1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    /// avg, concat, lstm, concat_fc, nonlocal_concat_fc, bert
    Poolers,
    /// no-cls, one head, eight heads, two layers
    BertSwitches,
}

/// Shared document for `train` and `ablate`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataSource,
    /// Head trained by `train`.
    #[serde(default)]
    pub pooler: Option<PoolerConfig>,
    /// Explicit variant list for `ablate`.
    #[serde(default)]
    pub variants: Option<Vec<Variant>>,
    /// Named variant list for `ablate`, built from `bert`.
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub bert: Option<BertPoolerConfig>,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedHead {
    pub name: String,
    pub head: HeadConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedBackbone {
    pub name: String,
    pub backbone: ToyBackboneConfig,
    #[serde(default)]
    pub reduction: Option<UnitBlockSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub out: Option<PathBuf>,
    /// Built-in presets; empty selects all of them.
    pub presets: Vec<String>,
    pub heads: Vec<NamedHead>,
    pub backbones: Vec<NamedBackbone>,
}

/// Read a JSON document, or start from `{}` when no path is given.
pub fn load_document(path: Option<&Path>) -> Result<Value> {
    let Some(path) = path else {
        return Ok(Value::Object(Default::default()));
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
}

/// Apply one `key=value` override. Keys may be dotted paths into nested
/// objects; values are parsed as JSON and fall back to plain strings.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!(Invalid(format!("override {assignment:?} is not of the form key=value")));
    };
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            bail!(Invalid(format!("override key {key:?} has an empty component")));
        }
        let Value::Object(map) = node else {
            bail!(Invalid(format!("override {key:?}: {} is not an object", parts[..i].join("."))));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

pub fn decode<T: DeserializeOwned>(doc: Value, what: &str) -> Result<T> {
    serde_json::from_value(doc).map_err(|e| Invalid(format!("{what}: {e}")).into())
}
