use f4flow_core::models::{base_forward, Activation, BaseModel, BaseModelSpec, BlockKind};
use f4flow_core::seed;
use f4flow_core::tensor::{adjoint_gap, grad_check, primitive_adjoint_gaps, Build, GradCheckConfig, Params, Tape, Tensor};
use f4flow_oracles::{conv3d_naive, refine2_naive, upsample2_naive, OracleReport};
use rand::Rng;

#[test]
fn every_op_passes_the_adjoint_test() {
    for (name, gap) in primitive_adjoint_gaps(3).unwrap() {
        assert!(gap < 1e-6, "{name}: adjoint gap {gap:e}");
    }
}

#[test]
fn linear_op_gap_is_at_rounding_level() {
    let build: &Build = &|t, x| t.scale(x, 3.0);
    assert!(adjoint_gap(&[4], build, 1e-3, 0).unwrap() < 1e-9);
}

#[test]
fn conv_matches_direct_loops() {
    let mut rng = seed::rng(11);
    let (cin, cout, dims) = (3, 4, [5, 4, 6]);
    let n = cin * dims.iter().product::<usize>();
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..cout * cin * 27).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::new(vec![cin, 5, 4, 6], x.clone()).unwrap()).unwrap();
    let wv = tape.constant(Tensor::new(vec![cout, cin, 3, 3, 3], w.clone()).unwrap()).unwrap();
    let bv = tape.constant(Tensor::new(vec![cout], b.clone()).unwrap()).unwrap();
    let y = tape.conv3d(xv, wv, bv).unwrap();
    let want = conv3d_naive(&x, cin, dims, &w, &b);
    assert!(OracleReport::compare(tape.value(y).data(), &want).max_abs < 1e-12);
}

#[test]
fn upsample_matches_direct_loops() {
    let mut rng = seed::rng(12);
    let x: Vec<f64> = (0..2 * 3 * 4 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::new(vec![2, 3, 4, 5], x.clone()).unwrap()).unwrap();
    let y = tape.upsample2(xv).unwrap();
    assert_eq!(tape.shape(y), &[2, 6, 8, 10]);
    let want = upsample2_naive(&x, 2, [3, 4, 5]);
    assert!(OracleReport::compare(tape.value(y).data(), &want).max_abs < 1e-12);

    let s = tape.upsample2_samples(xv).unwrap();
    let want = refine2_naive(&x, 2, [3, 4, 5]);
    assert!(OracleReport::compare(tape.value(s).data(), &want).max_abs < 1e-12);
}

/// Zero-initialized output convs would make every upstream gradient zero.
fn randomize_zero_weights(params: &mut Params<f64>, seed: u64) {
    let mut rng = seed::rng(seed);
    for i in 0..params.len() {
        if params.name(i).ends_with(".w") && params.get(i).data().iter().all(|v| *v == 0.0) {
            for v in params.get_mut(i).data_mut() {
                *v = rng.gen_range(-0.2..0.2);
            }
        }
    }
}

#[test]
fn small_models_pass_grad_check() {
    let cases = [BlockKind::Residual, BlockKind::Dense, BlockKind::Csp]
        .into_iter()
        .flat_map(|k| [(k, Activation::Leaky), (k, Activation::Relu)]);
    for (i, (kind, act)) in cases.enumerate() {
        let spec = BaseModelSpec {
            channels: 4,
            n_blocks_low: 1,
            n_blocks_high: 1,
            block_kind: kind,
            activation: act,
            global_skip: i % 2 == 0,
            seed: 21,
        };
        let mut params = BaseModel::build(spec).unwrap().params.cast::<f64>();
        randomize_zero_weights(&mut params, 24);
        let n = 4;
        let mut rng = seed::rng(22);
        let vel: Vec<f64> = (0..3 * n * n * n).map(|_| rng.gen_range(-0.8..0.8)).collect();
        let mag: Vec<f64> = (0..n * n * n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let target: Vec<f64> = (0..3 * 8 * n * n * n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let weights: Vec<f64> = (0..target.len()).map(|i| if i % 3 == 0 { 0.2 } else { 1.0 }).collect();
        let report = grad_check(
            &params,
            |p| {
                let mut tape = Tape::new();
                let v = tape.constant(Tensor::new(vec![3, n, n, n], vel.clone())?)?;
                let m = tape.constant(Tensor::new(vec![1, n, n, n], mag.clone())?)?;
                let out = base_forward(&spec, p, &mut tape, v, m).map_err(|e| match e {
                    f4flow_core::models::ModelError::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
                let l = tape.weighted_sq_error(out, target.clone(), weights.clone())?;
                Ok((tape, l))
            },
            &GradCheckConfig {
                samples: 60,
                step: 1e-6,
                seed: 23,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed, "{kind:?}/{act:?}: {report:?}");
    }
}
