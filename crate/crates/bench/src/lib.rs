//! Fixtures shared by the benchmarks in `benches/`.

use latepool::pool::{BertPooler, BertPoolerConfig};
use latepool::{Init, ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    Init::Normal { std: 1.0 }.sample(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// An evaluation-mode BERT pooler of width `d` and its `[t × d]` input.
pub struct BertFixture {
    pub store: ParamStore<f32>,
    pub pooler: BertPooler,
    pub features: Tensor<f32>,
}

impl BertFixture {
    pub fn new(d: usize, heads: usize, t: usize) -> Self {
        let cfg = BertPoolerConfig {
            num_heads: heads,
            dropout_p: 0.0,
            mask_prob: 0.0,
            ..BertPoolerConfig::new(d)
        };
        let mut store = ParamStore::new();
        let pooler = BertPooler::new(&mut store, "bert", &cfg, &mut ChaCha8Rng::seed_from_u64(1))
            .expect("valid bench config");
        Self {
            store,
            pooler,
            features: random(&[t, d], 2),
        }
    }
}
