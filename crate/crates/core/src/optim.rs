//! First-order optimisers and the reduce-on-plateau learning-rate schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GradientMap, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Hyperparameters of AdamW with decoupled weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 1e-2, momentum: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adamw(AdamWConfig),
    Sgd(SgdConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::Adamw(AdamWConfig::default())
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match self {
            Self::Adamw(c) => c.lr,
            Self::Sgd(c) => c.lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Self::Adamw(c) => {
                c.lr >= 0.0
                    && (0.0..1.0).contains(&c.beta1)
                    && (0.0..1.0).contains(&c.beta2)
                    && c.eps > 0.0
                    && c.weight_decay >= 0.0
            }
            Self::Sgd(c) => c.lr >= 0.0 && (0.0..1.0).contains(&c.momentum),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }

    pub fn build<T: Scalar>(&self) -> Box<dyn Optimizer<T>> {
        match *self {
            Self::Adamw(c) => Box::new(AdamW::new(c)),
            Self::Sgd(c) => Box::new(Sgd::new(c)),
        }
    }
}

/// Updates parameters in place from accumulated gradients.
///
/// Parameters without an entry in the gradient map are left untouched.
pub trait Optimizer<T: Scalar>: Send {
    fn step(&mut self, store: &mut ParamStore<T>, grads: &GradientMap<T>);

    fn lr(&self) -> f64;

    fn set_lr(&mut self, lr: f64);
}

/// AdamW state: per-parameter moments and the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: BTreeMap<ParamId, Tensor<T>>,
    v: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.m.get(&id)
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.v.get(&id)
    }
}

/// `w ← w − lr·λ·w − lr·m̂/(√v̂ + eps)`.
pub fn adamw_step<T: Scalar>(state: &mut AdamW<T>, store: &mut ParamStore<T>, grads: &GradientMap<T>) {
    state.step += 1;
    let c = state.cfg;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let [lr, b1, b2, eps, decay] = [c.lr, c.beta1, c.beta2, c.eps, c.lr * c.weight_decay].map(T::from_f64);
    let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));
    for (id, g) in grads.iter() {
        let m = state.m.entry(id).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let v = state.v.entry(id).or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let w = store.get_mut(id);
        for (((wi, &gi), mi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *wi = *wi - decay * *wi - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

impl<T: Scalar> Optimizer<T> for AdamW<T> {
    fn step(&mut self, store: &mut ParamStore<T>, grads: &GradientMap<T>) {
        adamw_step(self, store, grads);
    }

    fn lr(&self) -> f64 {
        self.cfg.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }
}

/// SGD with heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub cfg: SgdConfig,
    buffers: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(cfg: SgdConfig) -> Self {
        Self {
            cfg,
            buffers: BTreeMap::new(),
        }
    }

    pub fn buffer(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.buffers.get(&id)
    }
}

/// `b ← μ·b + g`, `w ← w − lr·b`.
pub fn sgd_step<T: Scalar>(state: &mut Sgd<T>, store: &mut ParamStore<T>, grads: &GradientMap<T>) {
    let lr = T::from_f64(state.cfg.lr);
    let mu = T::from_f64(state.cfg.momentum);
    for (id, g) in grads.iter() {
        let b = state
            .buffers
            .entry(id)
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        let w = store.get_mut(id);
        for ((wi, &gi), bi) in w.data_mut().iter_mut().zip(g.data()).zip(b.data_mut()) {
            *bi = mu * *bi + gi;
            *wi -= lr * *bi;
        }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn step(&mut self, store: &mut ParamStore<T>, grads: &GradientMap<T>) {
        sgd_step(self, store, grads);
    }

    fn lr(&self) -> f64 {
        self.cfg.lr
    }

    fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { patience: 5, factor: 0.1 }
    }
}

/// Reduce-on-plateau over a metric that should decrease.
///
/// A strictly lower metric is an improvement. Once more than `patience`
/// consecutive epochs pass without one, the rate is multiplied by `factor`
/// and the counter restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub cfg: PlateauConfig,
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
    pub history: Vec<f64>,
}

impl Plateau {
    pub fn new(cfg: PlateauConfig, lr: f64) -> Result<Self> {
        if !(cfg.factor > 0.0 && cfg.factor < 1.0) {
            return Err(Error::config(format!("plateau factor must lie in (0, 1), got {}", cfg.factor)));
        }
        Ok(Self {
            cfg,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            history: Vec::new(),
        })
    }

    /// Record one epoch's metric and return the learning rate for the next epoch.
    pub fn step(&mut self, metric: f64) -> f64 {
        self.history.push(metric);
        if metric < self.best {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.cfg.patience {
            self.lr *= self.cfg.factor;
            self.bad_epochs = 0;
        }
        self.lr
    }
}

pub fn plateau_step(state: &mut Plateau, metric: f64) -> f64 {
    state.step(metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::scalar(w));
        (s, id)
    }

    fn grad(id: ParamId, g: f64) -> GradientMap<f64> {
        let mut m = GradientMap::new();
        m.accumulate(id, Tensor::scalar(g));
        m
    }

    #[test]
    fn adamw_zero_grad_decays_exactly() {
        let (mut s, id) = scalar_store(1.0);
        let mut opt = AdamW::new(AdamWConfig { lr: 0.1, weight_decay: 0.01, ..Default::default() });
        adamw_step(&mut opt, &mut s, &grad(id, 0.0));
        assert_eq!(s.get(id).data()[0], 0.999);
        adamw_step(&mut opt, &mut s, &grad(id, 0.0));
        assert!((s.get(id).data()[0] - 0.999 * 0.999).abs() < 1e-15);
    }

    #[test]
    fn adamw_without_decay_matches_adam_recurrence() {
        let (mut s, id) = scalar_store(0.5);
        let cfg = AdamWConfig { lr: 0.01, weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(cfg);
        let gs = [0.3, -1.2, 0.7];
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (k, &g) in gs.iter().enumerate() {
            adamw_step(&mut opt, &mut s, &grad(id, g));
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (k + 1) as i32;
            w -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((s.get(id).data()[0] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_momentum_recurrence() {
        let (mut s, id) = scalar_store(1.0);
        let mut opt = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.9 });
        sgd_step(&mut opt, &mut s, &grad(id, 1.0));
        assert!((s.get(id).data()[0] - 0.9).abs() < 1e-15);
        sgd_step(&mut opt, &mut s, &grad(id, 1.0));
        assert!((s.get(id).data()[0] - (0.9 - 0.1 * 1.9)).abs() < 1e-15);

        let (mut s, id) = scalar_store(2.0);
        let mut plain = Sgd::new(SgdConfig { lr: 0.5, momentum: 0.0 });
        sgd_step(&mut plain, &mut s, &grad(id, 0.0));
        assert_eq!(s.get(id).data()[0], 2.0);
        sgd_step(&mut plain, &mut s, &grad(id, 2.0));
        assert_eq!(s.get(id).data()[0], 1.0);
    }

    #[test]
    fn plateau_walkthrough() {
        let mut p = Plateau::new(PlateauConfig { patience: 2, factor: 0.1 }, 1.0).unwrap();
        let lrs: Vec<f64> = (0..5).map(|_| p.step(1.0)).collect();
        assert_eq!(lrs, vec![1.0, 1.0, 1.0, 0.1, 0.1]);
        let mut q = Plateau::new(PlateauConfig::default(), 0.5).unwrap();
        for i in 0..20 {
            assert_eq!(q.step(10.0 - i as f64), 0.5);
        }
        assert!(Plateau::new(PlateauConfig { patience: 1, factor: 1.0 }, 1.0).is_err());
    }

    #[test]
    fn absent_gradients_leave_params_alone() {
        let (mut s, id) = scalar_store(3.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut s, &GradientMap::new());
        assert_eq!(s.get(id).data()[0], 3.0);
    }
}
