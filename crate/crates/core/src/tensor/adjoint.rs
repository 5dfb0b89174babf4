use rand::Rng;

use super::{Real, Tape, Tensor, TensorError, Var};

/// Builds a tape fragment from one variable input.
pub type Build = dyn Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>;

/// Values bounded away from zero so piecewise-linear ops stay on one piece
/// for the finite-difference probe.
fn away_from_zero(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn forward(build: &Build, shape: &[usize], x: Vec<f64>) -> Result<Tensor<f64>, TensorError> {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::new(shape.to_vec(), x)?)?;
    let y = build(&mut tape, v)?;
    Ok(tape.value(y).clone())
}

/// Dot-product test `|<J u, v> − <u, Jᵀ v>|` relative to the magnitudes,
/// with `J u` from central differences of step `h` and `Jᵀ v` from the tape.
pub fn adjoint_gap(shape: &[usize], build: &Build, h: f64, seed: u64) -> Result<f64, TensorError> {
    let mut rng = crate::seed::rng(seed);
    let n: usize = shape.iter().product();
    let x = away_from_zero(n, &mut rng);
    let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.05..0.05)).collect();

    let mut tape = Tape::new();
    let xv = tape.variable(Tensor::new(shape.to_vec(), x.clone())?)?;
    let y = build(&mut tape, xv)?;
    let v: Vec<f64> = (0..tape.value(y).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let l = tape.dot_const(y, v.clone())?;
    let g = tape.backward(l)?;
    let vjp: f64 = g.var(xv).unwrap_or_default().iter().zip(&u).map(|(a, b)| a * b).sum();

    let shifted = |s: f64| x.iter().zip(&u).map(|(a, b)| a + s * b).collect::<Vec<_>>();
    let plus = forward(build, shape, shifted(h))?;
    let minus = forward(build, shape, shifted(-h))?;
    let jvp: f64 = plus
        .data()
        .iter()
        .zip(minus.data())
        .zip(&v)
        .map(|((p, m), w)| (p - m) / (2.0 * h) * w)
        .sum();
    Ok((jvp - vjp).abs() / (jvp.abs() + vjp.abs() + 1e-300))
}

fn constant<T: Real>(tape: &mut Tape<T>, shape: &[usize], seed: u64) -> Result<Var, TensorError> {
    let mut rng = crate::seed::rng(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-1.0..1.0)).unwrap()).collect();
    tape.constant(Tensor::new(shape.to_vec(), data)?)
}

/// Every differentiable primitive with respect to each of its inputs.
pub fn primitive_cases() -> Vec<(&'static str, Vec<usize>, Box<Build>)> {
    let xs = vec![2, 3, 4, 5];
    vec![
        (
            "conv3d/x",
            xs.clone(),
            Box::new(|t, x| {
                let w = constant(t, &[3, 2, 3, 3, 3], 1)?;
                let b = constant(t, &[3], 2)?;
                t.conv3d(x, w, b)
            }),
        ),
        (
            "conv3d/w",
            vec![3, 2, 3, 3, 3],
            Box::new(|t, w| {
                let x = constant(t, &[2, 3, 4, 5], 3)?;
                let b = constant(t, &[3], 4)?;
                t.conv3d(x, w, b)
            }),
        ),
        (
            "conv3d/b",
            vec![3],
            Box::new(|t, b| {
                let x = constant(t, &[2, 3, 4, 5], 5)?;
                let w = constant(t, &[3, 2, 3, 3, 3], 6)?;
                t.conv3d(x, w, b)
            }),
        ),
        ("relu", xs.clone(), Box::new(|t, x| t.relu(x))),
        ("leaky", xs.clone(), Box::new(|t, x| t.leaky_relu(x, 0.2))),
        (
            "add",
            xs.clone(),
            Box::new(|t, x| {
                let c = constant(t, &[2, 3, 4, 5], 7)?;
                let y = t.add(x, c)?;
                t.add(c, y)
            }),
        ),
        (
            "concat",
            xs.clone(),
            Box::new(|t, x| {
                let c = constant(t, &[1, 3, 4, 5], 8)?;
                t.concat(&[c, x, c, x])
            }),
        ),
        ("slice", xs.clone(), Box::new(|t, x| t.slice_channels(x, 1, 1))),
        ("upsample2", xs.clone(), Box::new(|t, x| t.upsample2(x))),
        ("upsample2_samples", xs.clone(), Box::new(|t, x| t.upsample2_samples(x))),
        ("scale", xs.clone(), Box::new(|t, x| t.scale(x, -2.5))),
        ("sum", xs.clone(), Box::new(|t, x| t.sum(x))),
        (
            "dot_const",
            xs.clone(),
            Box::new(|t, x| t.dot_const(x, (0..120).map(|i| i as f64 * 0.01).collect())),
        ),
        (
            "weighted_sq_error",
            xs,
            Box::new(|t, x| {
                let target = (0..120).map(|i| (i as f64 * 0.1).sin()).collect();
                let w = (0..120).map(|i| 0.5 + (i % 7) as f64).collect();
                t.weighted_sq_error(x, target, w)
            }),
        ),
    ]
}

/// Largest adjoint gap per primitive over `seeds` random probes.
pub fn primitive_adjoint_gaps(seeds: u64) -> Result<Vec<(&'static str, f64)>, TensorError> {
    let mut out = Vec::new();
    for (name, shape, build) in primitive_cases() {
        let mut worst = 0.0f64;
        for s in 0..seeds {
            worst = worst.max(adjoint_gap(&shape, build.as_ref(), 1e-3, s)?);
        }
        out.push((name, worst));
    }
    Ok(out)
}
