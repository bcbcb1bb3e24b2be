use latepool::backbone::{ClipModel, ToyBackboneConfig};
use latepool::data::gen_order_task;
use latepool::optim::{OptimizerConfig, PlateauConfig, SgdConfig};
use latepool::pool::{BertPoolerConfig, Head, HeadConfig, PoolerConfig};
use latepool::train::{evaluate, train, Split, TrainConfig};
use latepool::{Init, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bert_head(store: &mut ParamStore<f64>, seed: u64) -> Head {
    let cfg = HeadConfig::new(
        PoolerConfig::Bert(BertPoolerConfig { num_heads: 2, mask_prob: 0.3, dropout_p: 0.2, ..BertPoolerConfig::new(8) }),
        5,
        8,
        2,
    );
    Head::new(store, "head", &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn stochastic_training_is_reproducible_from_the_seed() {
    let data = gen_order_task(48, 5, 8, 2).unwrap().samples::<f64>();
    let cfg = TrainConfig { epochs: 3, batch_size: 10, seed: 9, ..Default::default() };
    let run = |seed: u64| {
        let mut store = ParamStore::new();
        let head = bert_head(&mut store, 1);
        let h = train(&head, &mut store, &data[..32], &data[32..], &TrainConfig { seed, ..cfg.clone() }).unwrap();
        (h.to_csv(), store.iter().map(|(_, p)| p.value.data().to_vec()).collect::<Vec<_>>())
    };
    let (a, b, c) = (run(9), run(9), run(10));
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn plateau_scheduler_lowers_the_rate_when_eval_loss_stalls() {
    let data = gen_order_task(24, 5, 8, 4).unwrap().samples::<f64>();
    let mut store = ParamStore::new();
    let head = bert_head(&mut store, 3);
    // Train on one half, evaluate on the other: with a huge rate the eval loss
    // stops improving quickly.
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 12,
        seed: 1,
        optimizer: OptimizerConfig::Sgd(SgdConfig { lr: 5.0, momentum: 0.0 }),
        scheduler: Some(PlateauConfig { patience: 1, factor: 0.5 }),
        stop_at_top1: None,
    };
    let h = train(&head, &mut store, &data[..12], &data[12..], &cfg).unwrap();
    let lrs: Vec<f64> = h.records.iter().filter(|r| r.split == Split::Train).map(|r| r.lr).collect();
    assert_eq!(lrs[0], 5.0);
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert!(*lrs.last().unwrap() < 5.0, "{lrs:?}");
}

#[test]
fn clip_model_trains_end_to_end() {
    let bb = ToyBackboneConfig::new([1, 4, 8, 8], 8);
    let head = HeadConfig::new(PoolerConfig::Bert(BertPoolerConfig { num_heads: 2, ..BertPoolerConfig::new(8) }), 0, 0, 2);
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = ClipModel::new(&mut store, &bb, &head, &mut rng).unwrap();
    let clips: Vec<_> = (0..6).map(|i| (Init::Normal { std: 1.0 }.sample(&bb.input, &mut rng), i % 2)).collect();
    let before = evaluate(&model, &store, &clips).unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 3, seed: 5, ..Default::default() };
    let h = train(&model, &mut store, &clips, &clips, &cfg).unwrap();
    assert_eq!(h.epochs(), 2);
    let after = evaluate(&model, &store, &clips).unwrap();
    assert!(before.loss.is_finite() && after.loss.is_finite());
    assert_ne!(before.loss, after.loss);
}
