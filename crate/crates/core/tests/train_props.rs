use f4flow_core::models::{BaseModel, BaseModelSpec, BlockKind, MetaModel, MetaModelSpec};
use f4flow_core::patch::{BatchComposition, PatchPair, HR_VOXELS, LR_VOXELS};
use f4flow_core::seed;
use f4flow_core::tensor::{Params, Tensor};
use f4flow_core::train::{
    bootstrap_dataset, compartment_weights, distinct_fraction, lr_schedule, train_base, train_meta, Adam, AdamConfig,
    Bagging, TrainConfig,
};
use f4flow_core::volume::Compartment;
use f4flow_oracles::{distinct_count_naive, expected_distinct_fraction, AdamReference};
use proptest::prelude::*;
use rand::Rng;

fn tiny(seed: u64) -> BaseModel {
    BaseModel::build(BaseModelSpec {
        channels: 4,
        n_blocks_low: 1,
        n_blocks_high: 1,
        block_kind: BlockKind::Residual,
        global_skip: false,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn random_patch(rng: &mut impl Rng, compartment: Compartment) -> PatchPair {
    let venc = 100.0;
    PatchPair {
        lr_mag: (0..LR_VOXELS).map(|_| rng.gen_range(0.0..1.0)).collect(),
        lr_vel: (0..3 * LR_VOXELS).map(|_| rng.gen_range(-60.0..60.0)).collect(),
        hr_vel: (0..3 * HR_VOXELS).map(|_| rng.gen_range(-60.0..60.0)).collect(),
        hr_mask: (0..HR_VOXELS).map(|_| rng.gen_bool(0.4)).collect(),
        venc,
        compartment,
        source_model: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn weights_balance_compartment_totals(counts in prop::collection::vec(1usize..40, 1..5)) {
        let batch = BatchComposition {
            counts: counts.iter().zip(Compartment::ALL).map(|(&s, c)| (c, s)).collect(),
        };
        let w = compartment_weights(&batch).unwrap();
        let products: Vec<f64> = w.iter().zip(&counts).map(|((_, w), &s)| w * s as f64).collect();
        for p in &products {
            prop_assert!((p - products[0]).abs() < 1e-12 * products[0].max(1.0));
        }
        prop_assert!(w.iter().all(|(_, w)| *w > 0.0));
    }

    #[test]
    fn balanced_batches_get_unit_weights(s in 1usize..50, k in 1usize..5) {
        let batch = BatchComposition {
            counts: Compartment::ALL[..k].iter().map(|&c| (c, s)).collect(),
        };
        prop_assert!(compartment_weights(&batch).unwrap().iter().all(|(_, w)| *w == 1.0));
    }

    #[test]
    fn schedule_halves_every_two_decays(epoch in 0usize..200, every in 1usize..30) {
        let cfg = TrainConfig { lr0: 1e-3, decay_every: every, ..Default::default() };
        let a = lr_schedule(epoch, &cfg);
        let b = lr_schedule(epoch + 2 * every, &cfg);
        prop_assert!((b / a - 0.5).abs() < 1e-12);
    }
}

#[test]
fn adam_matches_reference() {
    let mut rng = seed::rng(31);
    let init: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut params = Params::new();
    params.push("a.w", Tensor::new(vec![4], init[..4].to_vec()).unwrap());
    params.push("a.b", Tensor::new(vec![6], init[4..].to_vec()).unwrap());
    let mut adam = Adam::new(&params, AdamConfig::default());
    let mut reference = AdamReference::new(10, 0.9, 0.999, 1e-8);
    let mut flat = init.clone();
    for step in 0..50 {
        let g: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lr = 1e-2 / (1.0 + step as f64);
        adam.step(&mut params, &[g[..4].to_vec(), g[4..].to_vec()], lr).unwrap();
        reference.step(&mut flat, &g, lr);
    }
    let got: Vec<f64> = params.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    for (a, b) in got.iter().zip(&flat) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn bootstrap_distinct_fraction() {
    let idx: Vec<usize> = (0..10_000).collect();
    let sample = bootstrap_dataset(&idx, 77).unwrap();
    let f = distinct_fraction(&sample);
    assert_eq!(f, distinct_count_naive(&sample) as f64 / 10_000.0);
    assert!((f - expected_distinct_fraction(10_000)).abs() < 0.01);
    assert!((0.61..=0.65).contains(&f));
}

#[test]
fn bagging_contracts() {
    let mut rng = seed::rng(41);
    let p = random_patch(&mut rng, Compartment::Aortic);
    let m = tiny(1);
    let single = m.forward_sr(&p.lr_vel, &p.lr_mag, p.venc).unwrap();
    let copies = Bagging::new(vec![m.clone(), m.clone(), m.clone()]).unwrap();
    let bagged = copies.predict(&p.lr_vel, &p.lr_mag, p.venc).unwrap();
    assert!(single.iter().zip(&bagged).all(|(a, b)| a.to_bits() == b.to_bits()));

    let models = vec![tiny(1), tiny(2), tiny(3)];
    let forward = Bagging::new(models.clone()).unwrap();
    let reversed = Bagging::new(models.into_iter().rev().collect()).unwrap();
    assert_eq!(
        forward.predict(&p.lr_vel, &p.lr_mag, p.venc).unwrap(),
        reversed.predict(&p.lr_vel, &p.lr_mag, p.venc).unwrap()
    );
}

#[test]
fn training_is_deterministic_and_meta_freezes_bases() {
    let mut rng = seed::rng(51);
    let patches: Vec<PatchPair> = (0..6)
        .map(|i| random_patch(&mut rng, if i % 2 == 0 { Compartment::Aortic } else { Compartment::Cardiac }))
        .collect();
    let refs: Vec<&PatchPair> = patches.iter().collect();
    let cfg = TrainConfig {
        lr0: 1e-3,
        epochs: 2,
        batch_size: 2,
        seed: 5,
        record_wall_time: false,
        ..Default::default()
    };
    let mut a = tiny(7);
    let mut b = tiny(7);
    let log_a = train_base(&mut a, &refs[..4], &refs[4..], &cfg).unwrap();
    let log_b = train_base(&mut b, &refs[..4], &refs[4..], &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(log_a.to_csv().unwrap(), log_b.to_csv().unwrap());
    assert_ne!(a, tiny(7));

    let bases = vec![a, tiny(8)];
    let before = bases.clone();
    let mut meta = MetaModel::build(MetaModelSpec {
        n_base: 2,
        channels: 4,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    let meta_cfg = TrainConfig { epochs: 1, ..cfg };
    train_meta(&mut meta, &bases, &refs[..4], &refs[4..], &meta_cfg).unwrap();
    assert_eq!(bases, before);
}
