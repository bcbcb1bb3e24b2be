//! Late temporal pooling heads.
//!
//! Every head maps [`TemporalFeatures`] `[T × D]` to a class-score vector.
//! The parameter-free poolers live in [`mod@simple`], the attention poolers in
//! [`bert`] and [`nonlocal`], the assembled classification heads in [`head`]
//! and the two-stream variants in [`fusion`].

pub mod bert;
pub mod fusion;
pub mod head;
pub mod nonlocal;
pub mod simple;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Linear;
use crate::tensor::{Scalar, Tensor};

pub use bert::{apply_feature_mask, attention_scores, pffn, BertPooler, BertPoolerConfig, MaskMode, PoolOutput};
pub use fusion::{FusionConfig, FusionKind, FusionModel, TwoStreamFeatures};
pub use head::{Head, HeadConfig, Pooler, PoolerConfig};
pub use nonlocal::NonlocalBlock;
pub use simple::{concat_pool, fc_width_for_budget, temporal_downsample, tgap};

/// A `[T × D]` matrix of per-timestep features.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalFeatures<T> {
    features: Tensor<T>,
}

impl<T: Scalar> TemporalFeatures<T> {
    pub fn new(features: Tensor<T>) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::dim("temporal features", features.shape(), &[]));
        }
        Ok(Self { features })
    }

    pub fn from_rows(t: usize, d: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Tensor::new([t, d], data)?)
    }

    pub fn len(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.features
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.features
    }

    /// Rows reordered so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let t = self.len();
        let mut seen = vec![false; t];
        if perm.len() != t || perm.iter().any(|&p| p >= t || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract(format!("{perm:?} is not a permutation of 0..{t}")));
        }
        let data = perm.iter().flat_map(|&p| self.features.row(p).iter().copied()).collect();
        Self::from_rows(t, self.dim(), data)
    }

    /// Record the features as a constant graph input.
    pub fn input(&self, g: &mut Graph<T>) -> Var {
        g.input(self.features.clone())
    }
}

/// Class scores and the predicted label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutput {
    pub logits: Vec<f64>,
}

impl ClassifierOutput {
    pub fn new(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::contract("classifier output needs at least one class"));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("classifier produced non-finite logits"));
        }
        Ok(Self { logits })
    }

    pub fn from_var<T: Scalar>(g: &Graph<T>, logits: Var) -> Result<Self> {
        Self::new(g.value(logits).to_f64_vec())
    }

    pub fn num_classes(&self) -> usize {
        self.logits.len()
    }

    pub fn predicted(&self) -> usize {
        argmax(&self.logits)
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Apply the final linear classifier to a pooled vector.
pub fn classify<T: Scalar>(g: &mut Graph<T>, pooled: Var, head: &Linear) -> Result<Var> {
    if g.shape(pooled).len() != 1 {
        return Err(Error::dim("classify", g.shape(pooled), &[head.in_dim]));
    }
    head.forward(g, pooled)
}

/// How several score vectors are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFusion {
    /// Average, as used across clips of one video.
    #[default]
    Mean,
    /// Sum, as used across the streams of a two-stream model.
    Sum,
}

pub fn fuse_scores(outputs: &[ClassifierOutput], mode: ScoreFusion) -> Result<ClassifierOutput> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::contract("fuse_scores needs at least one score vector"))?;
    let c = first.num_classes();
    let mut acc = vec![0.0; c];
    for o in outputs {
        if o.num_classes() != c {
            return Err(Error::dim("fuse_scores", &[c], &[o.num_classes()]));
        }
        for (a, v) in acc.iter_mut().zip(&o.logits) {
            *a += v;
        }
    }
    if mode == ScoreFusion::Mean {
        let n = outputs.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    ClassifierOutput::new(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LinearInit;
    use crate::params::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn out(v: &[f64]) -> ClassifierOutput {
        ClassifierOutput::new(v.to_vec()).unwrap()
    }

    #[test]
    fn fuse_modes() {
        let a = out(&[1.0, 0.0]);
        let b = out(&[0.0, 1.0]);
        assert_eq!(fuse_scores(std::slice::from_ref(&a), ScoreFusion::Mean).unwrap(), a);
        assert_eq!(fuse_scores(&[a.clone(), b.clone()], ScoreFusion::Mean).unwrap().logits, vec![0.5, 0.5]);
        let c = out(&[0.2, 3.0]);
        let mean = fuse_scores(&[a.clone(), c.clone()], ScoreFusion::Mean).unwrap();
        let sum = fuse_scores(&[a.clone(), c], ScoreFusion::Sum).unwrap();
        assert_eq!(sum.logits, vec![1.2, 3.0]);
        assert_eq!(mean.predicted(), sum.predicted());
        assert!(fuse_scores(&[a, out(&[1.0, 2.0, 3.0])], ScoreFusion::Sum).is_err());
        assert!(fuse_scores(&[], ScoreFusion::Sum).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn classify_zero_weights_returns_bias() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = Linear::new(&mut store, "cls", 3, 4, LinearInit::Zeros, &mut rng).unwrap();
        store.set(head.bias.unwrap(), Tensor::from_f64([4], &[0.1, 0.7, -1.0, 0.2]).unwrap());
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_f64([3], &[5.0, -2.0, 1.0]).unwrap());
        let l = classify(&mut g, x, &head).unwrap();
        let o = ClassifierOutput::from_var(&g, l).unwrap();
        assert_eq!(o.logits, vec![0.1, 0.7, -1.0, 0.2]);
        assert_eq!(o.predicted(), 1);
    }

    #[test]
    fn permutation_is_validated() {
        let f = TemporalFeatures::<f64>::from_rows(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.permuted(&[2, 0, 1]).unwrap().tensor().data(), &[3.0, 1.0, 2.0]);
        assert!(f.permuted(&[0, 0, 1]).is_err());
        assert!(f.permuted(&[0, 1]).is_err());
    }
}
