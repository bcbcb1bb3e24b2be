//! Parameter storage, gradient maps and initialisation.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::tensor::{Scalar, Tensor};

/// Stable identity of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub requires_grad: bool,
}

/// Flat, ordered collection of named learnable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            requires_grad: true,
        });
        ParamId(self.params.len() - 1)
    }

    /// Insert a tensor that takes part in forward passes but receives no gradient.
    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let id = self.insert(name, value);
        self.params[id.0].requires_grad = false;
        id
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) {
        let slot = &mut self.params[id.0].value;
        assert_eq!(slot.shape(), value.shape(), "parameter shape is fixed");
        *slot = value;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn requires_grad(&self, id: ParamId) -> bool {
        self.params[id.0].requires_grad
    }

    pub fn set_requires_grad(&mut self, id: ParamId, flag: bool) {
        self.params[id.0].requires_grad = flag;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> u64 {
        self.params.iter().map(|p| p.value.numel() as u64).sum()
    }

    /// Scalar count of every parameter whose name starts with `prefix`.
    pub fn num_scalars_with_prefix(&self, prefix: &str) -> u64 {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel() as u64)
            .sum()
    }
}

/// Per-parameter gradients keyed by parameter identity.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap<T> {
    grads: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Default for GradientMap<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradientMap<T> {
    pub fn new() -> Self {
        Self {
            grads: BTreeMap::new(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(&id)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.grads.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: Tensor<T>) {
        match self.grads.get_mut(&id) {
            Some(g) => g.add_assign(&grad),
            None => {
                self.grads.insert(id, grad);
            }
        }
    }

    /// Add every gradient of `other` into `self`.
    pub fn merge(&mut self, other: GradientMap<T>) {
        for (id, g) in other.grads {
            self.accumulate(id, g);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
}

/// Weight initialisation schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal { std: f64 },
    /// Uniform on `[-bound, bound]`.
    Uniform { bound: f64 },
}

impl Init {
    pub fn sample<T: Scalar, R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        let numel: usize = shape.iter().product();
        let data: Vec<T> = match self {
            Init::Zeros => vec![T::zero(); numel],
            Init::Ones => vec![T::one(); numel],
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
                (0..numel).map(|_| T::from_f64(dist.sample(rng))).collect()
            }
            Init::Uniform { bound } => {
                if bound == 0.0 {
                    vec![T::zero(); numel]
                } else {
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    (0..numel).map(|_| T::from_f64(dist.sample(rng))).collect()
                }
            }
        };
        Tensor::from_parts(shape.to_vec(), data)
    }
}

/// Deterministically derive a child seed from a root seed and a tag path.
///
/// Uses the splitmix64 finaliser so nearby roots and tags spread apart.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix(root ^ 0x5851_f42d_4c95_7f2d);
    for &t in tags {
        state = splitmix(state ^ splitmix(t.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    state
}

/// Seed derived from a textual label, e.g. a consumer name.
pub fn derive_seed_str(root: u64, label: &str) -> u64 {
    // FNV-1a keeps the mapping stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive_seed(root, &[h])
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
