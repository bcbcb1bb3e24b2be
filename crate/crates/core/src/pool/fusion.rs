//! Two-stream (slow/fast) BERT heads.
//!
//! Early fusion reduces both streams, brings the fast stream down to the slow
//! temporal resolution, concatenates channels and runs one BERT. Late fusion
//! runs one BERT per stream and concatenates the two `y_cls` vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bert::{BertPooler, BertPoolerConfig};
use super::simple::temporal_downsample;
use super::TemporalFeatures;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Linear, LinearInit};
use crate::params::ParamStore;
use crate::tensor::Scalar;

/// Slow features `[T_s × D_s]` paired with fast features `[α·T_s × D_f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamFeatures<T> {
    pub slow: TemporalFeatures<T>,
    pub fast: TemporalFeatures<T>,
}

impl<T: Scalar> TwoStreamFeatures<T> {
    pub fn new(slow: TemporalFeatures<T>, fast: TemporalFeatures<T>) -> Result<Self> {
        if fast.len() < slow.len() || !fast.len().is_multiple_of(slow.len()) {
            return Err(Error::config(format!(
                "fast length {} is not an integer multiple of slow length {}",
                fast.len(),
                slow.len()
            )));
        }
        Ok(Self { slow, fast })
    }

    /// The speed ratio `α = T_f / T_s`.
    pub fn alpha(&self) -> usize {
        self.fast.len() / self.slow.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Early,
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub kind: FusionKind,
    pub slow_len: usize,
    pub alpha: usize,
    pub slow_dim: usize,
    pub fast_dim: usize,
    pub slow_reduced: usize,
    /// Reduced fast width; `None` keeps the fast features at `fast_dim`.
    pub fast_reduced: Option<usize>,
    /// Template for every BERT module; `d_model` is set per module.
    pub bert: BertPoolerConfig,
    pub num_classes: usize,
}

impl FusionConfig {
    /// Slow 2048 → 512 and fast 256 → 128, fused into one 640-wide BERT.
    pub fn paper_early(slow_len: usize, num_classes: usize) -> Self {
        Self {
            kind: FusionKind::Early,
            slow_len,
            alpha: 4,
            slow_dim: 2048,
            fast_dim: 256,
            slow_reduced: 512,
            fast_reduced: Some(128),
            bert: BertPoolerConfig::new(512),
            num_classes,
        }
    }

    /// Slow 2048 → 512 and fast kept at 256, one BERT each.
    pub fn paper_late(slow_len: usize, num_classes: usize) -> Self {
        Self {
            kind: FusionKind::Late,
            fast_reduced: None,
            ..Self::paper_early(slow_len, num_classes)
        }
    }

    pub fn fast_len(&self) -> usize {
        self.alpha * self.slow_len
    }

    pub fn fast_width(&self) -> usize {
        self.fast_reduced.unwrap_or(self.fast_dim)
    }

    /// BERT configurations in the order they are applied.
    pub fn bert_configs(&self) -> Vec<BertPoolerConfig> {
        let with = |d| BertPoolerConfig {
            d_model: d,
            ..self.bert.clone()
        };
        match self.kind {
            FusionKind::Early => vec![with(self.slow_reduced + self.fast_width())],
            FusionKind::Late => vec![with(self.slow_reduced), with(self.fast_width())],
        }
    }

    pub fn classifier_input_width(&self) -> usize {
        self.slow_reduced + self.fast_width()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.slow_len, self.alpha, self.slow_dim, self.fast_dim, self.slow_reduced, self.num_classes];
        if dims.contains(&0) || self.fast_reduced == Some(0) {
            return Err(Error::config("fusion: every length, width and class count must be positive"));
        }
        for c in self.bert_configs() {
            c.validate()?;
        }
        Ok(())
    }

    fn reduce_params(inp: usize, out: usize) -> u64 {
        (inp * out + out) as u64
    }

    pub fn num_params(&self) -> u64 {
        let mut n = Self::reduce_params(self.slow_dim, self.slow_reduced);
        if let Some(f) = self.fast_reduced {
            n += Self::reduce_params(self.fast_dim, f);
        }
        n += self.bert_configs().iter().map(BertPoolerConfig::num_params).sum::<u64>();
        n + Self::reduce_params(self.classifier_input_width(), self.num_classes)
    }
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    pub cfg: FusionConfig,
    pub slow_reduce: Linear,
    pub fast_reduce: Option<Linear>,
    pub berts: Vec<BertPooler>,
    pub classifier: Linear,
}

impl FusionModel {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &FusionConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let init = LinearInit::FanIn;
        let slow_reduce = Linear::new(store, &format!("{name}.slow_reduce"), cfg.slow_dim, cfg.slow_reduced, init, rng)?;
        let fast_reduce = cfg
            .fast_reduced
            .map(|f| Linear::new(store, &format!("{name}.fast_reduce"), cfg.fast_dim, f, init, rng))
            .transpose()?;
        let berts = cfg
            .bert_configs()
            .iter()
            .enumerate()
            .map(|(i, c)| BertPooler::new(store, &format!("{name}.bert{i}"), c, rng))
            .collect::<Result<Vec<_>>>()?;
        let cls_init = cfg.bert.linear_init_std.map_or(LinearInit::FanIn, LinearInit::Normal);
        let classifier = Linear::new(
            store,
            &format!("{name}.classifier"),
            cfg.classifier_input_width(),
            cfg.num_classes,
            cls_init,
            rng,
        )?;
        Ok(Self {
            cfg: cfg.clone(),
            slow_reduce,
            fast_reduce,
            berts,
            classifier,
        })
    }

    fn check_inputs<T: Scalar>(&self, g: &Graph<T>, slow: Var, fast: Var) -> Result<()> {
        let c = &self.cfg;
        if g.shape(slow) != [c.slow_len, c.slow_dim] {
            return Err(Error::dim("fusion slow stream", g.shape(slow), &[c.slow_len, c.slow_dim]));
        }
        if g.shape(fast) != [c.fast_len(), c.fast_dim] {
            return Err(Error::dim("fusion fast stream", g.shape(fast), &[c.fast_len(), c.fast_dim]));
        }
        Ok(())
    }

    fn reduce_fast<T: Scalar>(&self, g: &mut Graph<T>, fast: Var) -> Result<Var> {
        match &self.fast_reduce {
            Some(l) => l.forward(g, fast),
            None => Ok(fast),
        }
    }

    /// Early fusion: one BERT over channel-concatenated, time-aligned streams.
    pub fn early_fusion_bert<T: Scalar>(&self, g: &mut Graph<T>, slow: Var, fast: Var) -> Result<Var> {
        self.check_inputs(g, slow, fast)?;
        let s = self.slow_reduce.forward(g, slow)?;
        let f = temporal_downsample(g, fast, self.cfg.alpha)?;
        let f = self.reduce_fast(g, f)?;
        if g.shape(s)[0] != g.shape(f)[0] {
            return Err(Error::dim("early fusion", g.shape(s), g.shape(f)));
        }
        let fused = g.concat(&[s, f], 1)?;
        let y = self.berts[0].forward(g, fused)?.y_cls;
        self.classifier.forward(g, y)
    }

    /// Late fusion: one BERT per stream, `y_cls` vectors concatenated.
    pub fn late_fusion_bert<T: Scalar>(&self, g: &mut Graph<T>, slow: Var, fast: Var) -> Result<Var> {
        self.check_inputs(g, slow, fast)?;
        let s = self.slow_reduce.forward(g, slow)?;
        let f = self.reduce_fast(g, fast)?;
        let ys = self.berts[0].forward(g, s)?.y_cls;
        let yf = self.berts[1].forward(g, f)?.y_cls;
        let y = g.concat(&[ys, yf], 0)?;
        self.classifier.forward(g, y)
    }

    pub fn logits<T: Scalar>(&self, g: &mut Graph<T>, input: &TwoStreamFeatures<T>) -> Result<Var> {
        let slow = input.slow.input(g);
        let fast = input.fast.input(g);
        match self.cfg.kind {
            FusionKind::Early => self.early_fusion_bert(g, slow, fast),
            FusionKind::Late => self.late_fusion_bert(g, slow, fast),
        }
    }
}
