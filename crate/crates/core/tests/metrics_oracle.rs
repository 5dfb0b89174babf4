use f4flow_core::eval::{regression_stats, relative_error, rmse_regions, stitch_sr, evaluate, OracleStub, TrilinearStub};
use f4flow_core::seed;
use f4flow_core::volume::{Compartment, FlowSample, FluidMask, ScalarField, VectorField, VolumeGrid};
use f4flow_oracles::metrics_naive;
use proptest::prelude::*;
use rand::Rng;

fn random_volume(n: usize, seed: u64) -> (VectorField, VectorField, FluidMask) {
    let g = VolumeGrid::cubic(n, 1.0).unwrap();
    let mut rng = seed::rng(seed);
    let mut field = |s: f32| {
        let mut c = || (0..g.len()).map(|_| rng.gen_range(-s..s)).collect::<Vec<f32>>();
        let (x, y, z) = (c(), c(), c());
        VectorField::new(g, x, y, z).unwrap()
    };
    let reference = field(100.0);
    let pred = field(120.0);
    let mut mask: Vec<bool> = (0..g.len()).map(|_| rng.gen_bool(0.6)).collect();
    mask[0] = true;
    mask[1] = true;
    (pred, reference, FluidMask::new(g, mask).unwrap())
}

#[test]
fn fast_metrics_match_naive_loops() {
    for s in 0..50 {
        let (p, r, m) = random_volume(6, s);
        let naive = metrics_naive(&p, &r, &m).unwrap();
        let re = relative_error(&p, &r, &m).unwrap();
        let rmse = rmse_regions(&p, &r, &m).unwrap();
        let reg = regression_stats(&p, &r, &m).unwrap();
        assert!((re - naive.re).abs() < 1e-12);
        let close = |a: [f64; 3], b: [f64; 3]| a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(rmse.fluid.unwrap(), naive.rmse_fluid.unwrap()));
        assert_eq!(rmse.nonfluid.is_some(), naive.rmse_nonfluid.is_some());
        if let (Some(a), Some(b)) = (rmse.nonfluid, naive.rmse_nonfluid) {
            assert!(close(a, b));
        }
        assert!(close(reg.k, naive.k));
        assert!(close(reg.r2, naive.r2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn relative_error_is_bounded(seed in any::<u64>()) {
        let (p, r, m) = random_volume(4, seed);
        let re = relative_error(&p, &r, &m).unwrap();
        prop_assert!((0.0..1.0).contains(&re));
        prop_assert_eq!(relative_error(&r, &r, &m).unwrap(), 0.0);
    }

    #[test]
    fn regression_slope_tracks_scale(seed in any::<u64>(), s in 0.1f32..3.0) {
        let (_, r, m) = random_volume(4, seed);
        let reg = regression_stats(&r.scaled(s), &r, &m).unwrap();
        for c in 0..3 {
            prop_assert!((reg.k[c] - s as f64).abs() < 1e-5);
            prop_assert!((reg.r2[c] - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn stitching_an_exact_model_leaves_no_seams() {
    let hg = VolumeGrid::new(40, 32, 52, 0.5).unwrap();
    let mut rng = seed::rng(3);
    let mut c = || (0..hg.len()).map(|_| rng.gen_range(-50.0..50.0)).collect::<Vec<f32>>();
    let (x, y, z) = (c(), c(), c());
    let truth = VectorField::new(hg, x, y, z).unwrap();
    let lg = VolumeGrid::new(20, 16, 26, 1.0).unwrap();
    let lr = FlowSample::new(
        ScalarField::filled(lg, 1.0),
        VectorField::zeros(lg),
        FluidMask::new(lg, vec![true; lg.len()]).unwrap(),
        100.0,
        Compartment::Aortic,
        0,
    )
    .unwrap();
    let out = stitch_sr(&OracleStub::new(truth.clone()), &lr).unwrap();
    assert_eq!(out, truth);
}

#[test]
fn stitched_trilinear_reproduces_constant_flow() {
    let lg = VolumeGrid::cubic(16, 1.0).unwrap();
    let n = lg.len();
    let lr = FlowSample::new(
        ScalarField::filled(lg, 1.0),
        VectorField::new(lg, vec![12.0; n], vec![-3.0; n], vec![0.5; n]).unwrap(),
        FluidMask::new(lg, vec![true; n]).unwrap(),
        100.0,
        Compartment::Cardiac,
        0,
    )
    .unwrap();
    let out = stitch_sr(&TrilinearStub, &lr).unwrap();
    assert_eq!(out.grid().dims(), [32, 32, 32]);
    assert!(out.vx().iter().all(|&v| (v - 12.0).abs() < 1e-5));
    let hg = *out.grid();
    let reference = FlowSample::new(
        ScalarField::filled(hg, 1.0),
        out.clone(),
        FluidMask::new(hg, vec![true; hg.len()]).unwrap(),
        100.0,
        Compartment::Cardiac,
        0,
    )
    .unwrap();
    let rep = evaluate(&out, &reference, "trilinear").unwrap();
    assert_eq!(rep.re, 0.0);
    assert_eq!(rep.n_nonfluid, 0);
    assert!(rep.rmse_nonfluid.is_none());
}
