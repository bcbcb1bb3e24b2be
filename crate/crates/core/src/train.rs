//! Mini-batch training and evaluation loops.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::ClipModel;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::optim::{OptimizerConfig, Plateau, PlateauConfig};
use crate::params::{derive_seed, GradientMap, ParamStore};
use crate::pool::{argmax, FusionModel, Head, TemporalFeatures, TwoStreamFeatures};
use crate::tensor::{Scalar, Tensor};

/// Anything that maps one input to class logits on a graph.
pub trait Model<T: Scalar>: Sync {
    type Input: Sync;

    fn logits(&self, g: &mut Graph<T>, input: &Self::Input) -> Result<Var>;
}

impl<T: Scalar> Model<T> for Head {
    type Input = TemporalFeatures<T>;

    fn logits(&self, g: &mut Graph<T>, input: &TemporalFeatures<T>) -> Result<Var> {
        let x = input.input(g);
        Head::logits(self, g, x)
    }
}

impl<T: Scalar> Model<T> for FusionModel {
    type Input = TwoStreamFeatures<T>;

    fn logits(&self, g: &mut Graph<T>, input: &TwoStreamFeatures<T>) -> Result<Var> {
        FusionModel::logits(self, g, input)
    }
}

impl<T: Scalar> Model<T> for ClipModel {
    type Input = Tensor<T>;

    fn logits(&self, g: &mut Graph<T>, input: &Tensor<T>) -> Result<Var> {
        let x = g.input(input.clone());
        ClipModel::logits(self, g, x)
    }
}

/// A labelled example.
pub type Sample<I> = (I, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Reduce-on-plateau on the evaluation loss (training loss without an evaluation set).
    pub scheduler: Option<PlateauConfig>,
    /// Stop after the first epoch whose evaluation top-1 reaches this value.
    pub stop_at_top1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            scheduler: Some(PlateauConfig::default()),
            stop_at_top1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub top1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self, split: Split) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }

    pub fn epochs(&self) -> usize {
        self.records.iter().map(|r| r.epoch + 1).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,split,loss,top1,lr\n");
        for r in &self.records {
            writeln!(s, "{},{},{},{},{}", r.epoch, r.split.as_str(), r.loss, r.top1, r.lr).expect("string write");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Mean loss and top-1 accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub loss: f64,
    pub top1: f64,
}

struct Pass<T> {
    grads: Option<GradientMap<T>>,
    loss: f64,
    correct: bool,
}

fn run_sample<T: Scalar, M: Model<T>>(
    model: &M,
    store: &ParamStore<T>,
    sample: &Sample<M::Input>,
    train_seed: Option<u64>,
) -> Result<Pass<T>> {
    let mut g = match train_seed {
        Some(seed) => Graph::training(store, seed),
        None => Graph::new(store),
    };
    let logits = model.logits(&mut g, &sample.0)?;
    let correct = argmax(g.value(logits).data()) == sample.1;
    let loss = g.cross_entropy(logits, sample.1)?;
    let loss_val = g.value(loss).data()[0].as_f64();
    let grads = train_seed.map(|_| g.backward(loss)).transpose()?;
    Ok(Pass {
        grads,
        loss: loss_val,
        correct,
    })
}

/// Evaluation-mode loss and accuracy, fanned out over samples.
pub fn evaluate<T: Scalar, M: Model<T>>(model: &M, store: &ParamStore<T>, data: &[Sample<M::Input>]) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty dataset"));
    }
    let passes: Vec<Pass<T>> = data
        .par_iter()
        .map(|s| run_sample(model, store, s, None))
        .collect::<Result<_>>()?;
    Ok(summarize(&passes))
}

/// Evaluation-mode predicted labels.
pub fn predict<T: Scalar, M: Model<T>>(model: &M, store: &ParamStore<T>, inputs: &[M::Input]) -> Result<Vec<usize>> {
    inputs
        .par_iter()
        .map(|x| {
            let mut g = Graph::new(store);
            let l = model.logits(&mut g, x)?;
            Ok(argmax(g.value(l).data()))
        })
        .collect()
}

fn summarize<T>(passes: &[Pass<T>]) -> Metrics {
    let n = passes.len() as f64;
    Metrics {
        loss: passes.iter().map(|p| p.loss).sum::<f64>() / n,
        top1: passes.iter().filter(|p| p.correct).count() as f64 / n,
    }
}

/// Train `model` in place and return one record per epoch and split.
///
/// Each epoch shuffles the training set with a seed derived from
/// `(cfg.seed, epoch)`; every sample's dropout and masking stream is derived
/// from `(cfg.seed, epoch, index)`. Per-sample gradients are computed in
/// parallel and summed in sample order, so results do not depend on the
/// thread count. Training metrics come from the training-mode passes.
pub fn train<T: Scalar, M: Model<T>>(
    model: &M,
    store: &mut ParamStore<T>,
    train_set: &[Sample<M::Input>],
    eval_set: &[Sample<M::Input>],
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut opt = cfg.optimizer.build::<T>();
    let mut sched = cfg
        .scheduler
        .map(|c| Plateau::new(c, cfg.optimizer.lr()))
        .transpose()?;
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = opt.lr();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut passes = Vec::with_capacity(train_set.len());
        for batch in order.chunks(cfg.batch_size) {
            let frozen: &ParamStore<T> = store;
            let results: Vec<Pass<T>> = batch
                .par_iter()
                .map(|&i| {
                    let seed = derive_seed(cfg.seed, &[epoch as u64, i as u64]);
                    run_sample(model, frozen, &train_set[i], Some(seed))
                })
                .collect::<Result<_>>()?;
            let mut total = GradientMap::new();
            for p in &results {
                total.merge(p.grads.clone().expect("training pass"));
            }
            total.scale(T::from_f64(1.0 / batch.len() as f64));
            opt.step(store, &total);
            passes.extend(results.into_iter().map(|p| Pass::<T> {
                grads: None,
                ..p
            }));
        }
        let tm = summarize(&passes);
        history.records.push(EpochRecord {
            epoch,
            split: Split::Train,
            loss: tm.loss,
            top1: tm.top1,
            lr,
        });
        let em = if eval_set.is_empty() {
            None
        } else {
            Some(evaluate(model, store, eval_set)?)
        };
        if let Some(m) = em {
            history.records.push(EpochRecord {
                epoch,
                split: Split::Test,
                loss: m.loss,
                top1: m.top1,
                lr,
            });
        }
        if let Some(s) = sched.as_mut() {
            let next = s.step(em.map_or(tm.loss, |m| m.loss));
            opt.set_lr(next);
        }
        if let (Some(target), Some(m)) = (cfg.stop_at_top1, em) {
            if m.top1 >= target {
                break;
            }
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::AdamWConfig;
    use crate::params::Init;
    use crate::pool::{HeadConfig, PoolerConfig};

    fn toy(n: usize, seed: u64) -> Vec<Sample<TemporalFeatures<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let mut x: Tensor<f64> = Init::Normal { std: 0.5 }.sample(&[3, 2], &mut rng);
                let shift = if label == 0 { -1.0 } else { 1.0 };
                for t in 0..3 {
                    x.data_mut()[t * 2] += shift;
                }
                (TemporalFeatures::new(x).unwrap(), label)
            })
            .collect()
    }

    fn setup() -> (Head, ParamStore<f64>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = Head::new(&mut store, "head", &HeadConfig::new(PoolerConfig::Avg {}, 3, 2, 2), &mut rng).unwrap();
        (head, store)
    }

    #[test]
    fn zero_epochs_give_empty_history() {
        let (head, mut store) = setup();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(train(&head, &mut store, &toy(8, 1), &[], &cfg).unwrap().is_empty());
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let (head, mut store) = setup();
        let before = store.clone();
        let cfg = TrainConfig {
            epochs: 3,
            optimizer: OptimizerConfig::Adamw(AdamWConfig { lr: 0.0, ..Default::default() }),
            ..Default::default()
        };
        train(&head, &mut store, &toy(16, 1), &[], &cfg).unwrap();
        for id in store.ids() {
            assert_eq!(store.get(id), before.get(id));
        }
    }

    #[test]
    fn separable_toy_reaches_full_accuracy_deterministically() {
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            seed: 11,
            optimizer: OptimizerConfig::Adamw(AdamWConfig { lr: 0.05, ..Default::default() }),
            ..Default::default()
        };
        let data = toy(64, 2);
        let (head, mut store) = setup();
        let h1 = train(&head, &mut store, &data, &data, &cfg).unwrap();
        assert!(h1.last(Split::Test).unwrap().top1 >= 0.99);
        let (head, mut store) = setup();
        let h2 = train(&head, &mut store, &data, &data, &cfg).unwrap();
        assert_eq!(h1.to_csv(), h2.to_csv());
        assert!(h1.to_csv().starts_with("epoch,split,loss,top1,lr\n0,train,"));
    }
}
