use f4flow_core::models::upsample_lr_velocity;
use f4flow_core::seed;
use f4flow_core::synth::{
    add_complex_noise, decode_signal, encode_signal, kspace_truncate, kspace_truncate_raw, synthesize_pair, NoiseSpec,
};
use f4flow_core::volume::{Compartment, ComplexField, FlowSample, FluidMask, ScalarField, VectorField, VolumeGrid};
use f4flow_oracles::{kspace_crop_direct, OracleReport};
use proptest::prelude::*;
use rand::Rng;
use rustfft::num_complex::Complex64;

fn random_field(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed::rng(seed);
    let len = n * n * n;
    let re = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let im = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (re, im)
}

#[test]
fn truncation_matches_direct_dft() {
    for s in 0..5 {
        let (re, im) = random_field(8, s);
        let data: Vec<Complex64> = re.iter().zip(&im).map(|(&r, &i)| Complex64::new(r, i)).collect();
        let (fast, small) = kspace_truncate_raw(&data, [8, 8, 8], 2).unwrap();
        let (or, oi, osmall) = kspace_crop_direct(&re, &im, [8, 8, 8], 2);
        assert_eq!(small, osmall);
        let fr: Vec<f64> = fast.iter().map(|c| c.re).collect();
        let fi: Vec<f64> = fast.iter().map(|c| c.im).collect();
        assert!(OracleReport::compare(&fr, &or).max_rel < 1e-10);
        assert!(OracleReport::compare(&fi, &oi).max_rel < 1e-10);
    }
}

#[test]
fn anisotropic_truncation_matches_direct_dft() {
    let mut rng = seed::rng(9);
    let dims = [4, 6, 8];
    let n = 4 * 6 * 8;
    let re: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let im: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let data: Vec<Complex64> = re.iter().zip(&im).map(|(&r, &i)| Complex64::new(r, i)).collect();
    let (fast, small) = kspace_truncate_raw(&data, dims, 2).unwrap();
    let (or, _, osmall) = kspace_crop_direct(&re, &im, dims, 2);
    assert_eq!(small, osmall);
    let fr: Vec<f64> = fast.iter().map(|c| c.re).collect();
    assert!(OracleReport::compare(&fr, &or).max_rel < 1e-10);
}

#[test]
fn single_mode_halves_its_period() {
    let g = VolumeGrid::cubic(8, 1.0).unwrap();
    let re: Vec<f64> = (0..512)
        .map(|i| (2.0 * std::f64::consts::PI * (i % 8) as f64 / 8.0).cos())
        .collect();
    let out = kspace_truncate(&ComplexField::new(g, re, vec![0.0; 512]).unwrap(), 2).unwrap();
    for (i, v) in out.re.iter().enumerate() {
        let want = (2.0 * std::f64::consts::PI * (i % 4) as f64 / 4.0).cos();
        assert!((v - want).abs() < 1e-10);
    }
    assert!(out.im.iter().all(|v| v.abs() < 1e-10));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constants_are_fixed_points(re in -5.0f64..5.0, im in -5.0f64..5.0, n in 1usize..5) {
        let g = VolumeGrid::cubic(2 * n, 1.0).unwrap();
        let f = ComplexField::new(g, vec![re; g.len()], vec![im; g.len()]).unwrap();
        let out = kspace_truncate(&f, 2).unwrap();
        prop_assert!(out.re.iter().all(|v| (v - re).abs() < 1e-12));
        prop_assert!(out.im.iter().all(|v| (v - im).abs() < 1e-12));
    }

    #[test]
    fn encode_decode_round_trip(v in prop::collection::vec(-0.95f32..0.95, 3), venc in 10.0f32..400.0, m in 0.1f32..2.0) {
        let g = VolumeGrid::cubic(1, 1.0).unwrap();
        let vel = VectorField::new(g, vec![v[0] * venc], vec![v[1] * venc], vec![v[2] * venc]).unwrap();
        let sig = encode_signal(&vel, &ScalarField::filled(g, m), venc).unwrap();
        let (back, mag) = decode_signal(&sig, venc).unwrap();
        for c in 0..3 {
            let want = vel.components()[c][0];
            let got = back.components()[c][0];
            prop_assert!((got - want).abs() <= 1e-5 * venc);
        }
        prop_assert!((mag.values()[0] - m).abs() < 1e-5);
    }
}

#[test]
fn noise_std_matches_sigma() {
    let g = VolumeGrid::cubic(32, 1.0).unwrap();
    let s = ComplexField::zeros(g);
    let noisy = add_complex_noise(&s, 0.3, &mut seed::rng(4)).unwrap();
    for part in [&noisy.re, &noisy.im] {
        let n = part.len() as f64;
        let mean = part.iter().sum::<f64>() / n;
        let sd = (part.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd / 0.3 - 1.0).abs() < 0.05, "{sd}");
    }
}

#[test]
fn noiseless_pair_keeps_uniform_flow() {
    let g = VolumeGrid::cubic(16, 1.0).unwrap();
    let n = g.len();
    let hr = FlowSample::new(
        ScalarField::filled(g, 1.0),
        VectorField::new(g, vec![30.0; n], vec![-10.0; n], vec![5.0; n]).unwrap(),
        FluidMask::new(g, vec![true; n]).unwrap(),
        100.0,
        Compartment::Aortic,
        0,
    )
    .unwrap();
    let pair = synthesize_pair(&hr, &NoiseSpec::noiseless()).unwrap();
    assert_eq!(pair.sigma, 0.0);
    assert_eq!(pair.lr.grid().dims(), [8, 8, 8]);
    for (c, want) in [30.0f32, -10.0, 5.0].into_iter().enumerate() {
        assert!(pair.lr.velocity.components()[c].iter().all(|v| (v - want).abs() < 1e-3));
    }
    let again = synthesize_pair(&hr, &NoiseSpec::new(10.0, 3)).unwrap();
    assert_eq!(again, synthesize_pair(&hr, &NoiseSpec::new(10.0, 3)).unwrap());
}

#[test]
fn trilinear_refinement_lands_on_the_truncation_samples() {
    let tau = std::f64::consts::TAU;
    let g = VolumeGrid::cubic(16, 1.0).unwrap();
    let hr: Vec<f64> = (0..g.len()).map(|i| (tau * (i % 16) as f64 / 16.0).cos()).collect();
    let lr = kspace_truncate(&ComplexField::new(g, hr.clone(), vec![0.0; g.len()]).unwrap(), 2).unwrap();
    let one: Vec<f32> = lr.re.iter().map(|&v| v as f32).collect();
    let vel = [one.clone(), one.clone(), one].concat();
    let up = upsample_lr_velocity(&vel, 8).unwrap();
    for (i, want) in hr.iter().enumerate().filter(|(i, _)| i % 2 == 0) {
        assert!((up[i] as f64 - want).abs() < 1e-6, "voxel {i}");
    }
}
