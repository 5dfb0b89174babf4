//! Acceptance criteria 1–12. Prints one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- C3 C7` runs a subset.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{ensure, Result};
use rand::Rng;

use f4flow::config::ExperimentConfig;
use f4flow::pipeline::{build_dataset, train_configured, Dataset};
use f4flow_core::eval::{
    evaluate_patches, recover_native_eval, regression_stats, relative_error, rmse_regions, OracleStub, SuperResolver,
    TrilinearStub,
};
use f4flow_core::models::{base_forward, BaseModel, BaseModelSpec, MetaModel, MetaModelSpec, ModelError};
use f4flow_core::patch::{BatchComposition, PatchPair, SplitKind, HR_VOXELS, LR_VOXELS};
use f4flow_core::phantom::{generate_phantom, Family, PhantomSpec};
use f4flow_core::seed;
use f4flow_core::synth::{add_complex_noise, decode_signal, encode_signal, kspace_truncate, NoiseSpec};
use f4flow_core::tensor::{grad_check, primitive_adjoint_gaps, GradCheckConfig, Params, Tape, Tensor};
use f4flow_core::train::{bootstrap_dataset, compartment_weights, distinct_fraction, train_meta, Bagging, EnsembleKind, TrainConfig};
use f4flow_core::volume::{Compartment, ComplexField, FluidMask, ScalarField, VectorField, VolumeGrid};
use f4flow_oracles::{distinct_count_naive, kspace_crop_direct, metrics_naive, OracleReport};

type Check = fn() -> Result<(bool, String)>;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let criteria: [(&str, &str, Check); 12] = [
        ("C1", "k-space oracle equivalence", c1),
        ("C2", "single-mode exactness", c2),
        ("C3", "encode/decode round trip", c3),
        ("C4", "noise statistics", c4),
        ("C5", "gradient correctness", c5),
        ("C6", "loss algebra", c6),
        ("C7", "metric oracle equivalence", c7),
        ("C8", "ensemble contracts", c8),
        ("C9", "desk-scale learning signal", c9),
        ("C10", "generalization direction", c10),
        ("C11", "reproducibility", c11),
        ("C12", "recover-native plumbing", c12),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e:#}")));
        let secs = t.elapsed().as_secs_f64();
        println!("{} {id} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 && std::env::var_os("F4FLOW_STRICT").is_some() {
        std::process::exit(1);
    }
}

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn c1() -> Result<(bool, String)> {
    let t = Instant::now();
    let g = VolumeGrid::cubic(8, 1.0)?;
    let mut worst = 0.0f64;
    for s in 0..20 {
        let mut rng = seed::rng(s);
        let re = uniform(512, -1.0, 1.0, &mut rng);
        let im = uniform(512, -1.0, 1.0, &mut rng);
        let fast = kspace_truncate(&ComplexField::new(g, re.clone(), im.clone())?, 2)?;
        let (ore, oim, dims) = kspace_crop_direct(&re, &im, [8, 8, 8], 2);
        ensure!(fast.grid.dims() == dims, "cropped grid {:?} vs {dims:?}", fast.grid.dims());
        worst = worst
            .max(OracleReport::compare(&fast.re, &ore).max_rel)
            .max(OracleReport::compare(&fast.im, &oim).max_rel);
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((worst < 1e-10 && secs < 10.0, format!("max rel {worst:.2e} over 20 fields in {secs:.2}s")))
}

fn c2() -> Result<(bool, String)> {
    let tau = std::f64::consts::TAU;
    let g = VolumeGrid::cubic(8, 1.0)?;
    let re: Vec<f64> = (0..512).map(|i| (tau * (i % 8) as f64 / 8.0).cos()).collect();
    let out = kspace_truncate(&ComplexField::new(g, re, vec![0.0; 512])?, 2)?;
    ensure!(out.grid.dims() == [4, 4, 4], "unexpected grid {:?}", out.grid.dims());
    let mut mode_err = out.im.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (i, v) in out.re.iter().enumerate() {
        mode_err = mode_err.max((v - (tau * (i % 4) as f64 / 4.0).cos()).abs());
    }
    let mut const_err = 0.0f64;
    for (k, (a, b)) in [(1.0, 0.0), (-3.25, 0.5), (0.0, 2.0)].into_iter().enumerate() {
        let g = VolumeGrid::cubic(4 + 2 * k, 1.0)?;
        let out = kspace_truncate(&ComplexField::new(g, vec![a; g.len()], vec![b; g.len()])?, 2)?;
        for (r, i) in out.re.iter().zip(&out.im) {
            const_err = const_err.max((r - a).abs()).max((i - b).abs());
        }
    }
    Ok((
        mode_err < 1e-10 && const_err < 1e-10,
        format!("single mode max abs {mode_err:.2e}, constants max abs {const_err:.2e}"),
    ))
}

fn c3() -> Result<(bool, String)> {
    let g = VolumeGrid::new(100, 100, 10, 1.0)?;
    let n = g.len();
    let mut worst = 0.0f64;
    for (k, venc) in [60.0f32, 150.0, 400.0].into_iter().enumerate() {
        let mut rng = seed::rng(300 + k as u64);
        let mut comp = || (0..n).map(|_| rng.gen_range(-0.95f32..0.95) * venc).collect::<Vec<f32>>();
        let vel = VectorField::new(g, comp(), comp(), comp())?;
        let mag = ScalarField::new(g, (0..n).map(|i| 0.1 + (i % 17) as f32 * 0.1).collect())?;
        let (back, _) = decode_signal(&encode_signal(&vel, &mag, venc)?, venc)?;
        for (want, got) in vel.components().iter().zip(back.components()) {
            for (w, v) in want.iter().zip(got) {
                worst = worst.max((v - w).abs() as f64 / w.abs().max(f32::MIN_POSITIVE) as f64);
            }
        }
    }
    Ok((worst < 1e-5, format!("max rel {worst:.2e} over 3x{n} voxels")))
}

fn std_dev(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    (v.map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn c4() -> Result<(bool, String)> {
    let sigma = 0.3;
    let noisy = add_complex_noise(&ComplexField::zeros(VolumeGrid::cubic(100, 1.0)?), sigma, &mut seed::rng(41))?;
    let dev = [&noisy.re, &noisy.im].map(|p| (std_dev(p.iter().copied()) / sigma - 1.0).abs());
    let channel_ok = dev.iter().all(|d| *d < 0.02);

    let g = VolumeGrid::cubic(64, 1.0)?;
    let mag = ScalarField::filled(g, 1.0);
    let vel_noise = |venc: f32, s: u64| -> Result<f64> {
        let mut rng = seed::rng(s);
        let sig = encode_signal(&VectorField::zeros(g), &mag, venc)?
            .map(|c| add_complex_noise(&c, 0.05, &mut rng))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let (v, _) = decode_signal(&[sig[0].clone(), sig[1].clone(), sig[2].clone()], venc)?;
        Ok(std_dev(v.vx().iter().map(|x| *x as f64)))
    };
    let ratio = vel_noise(150.0, 42)? / vel_noise(60.0, 43)?;
    let ratio_dev = (ratio / 2.5 - 1.0).abs();
    Ok((
        channel_ok && ratio_dev < 0.1,
        format!(
            "std deviation re {:.2}% im {:.2}% at 1e6 samples; velocity noise ratio {ratio:.3} vs 2.5",
            dev[0] * 100.0,
            dev[1] * 100.0
        ),
    ))
}

/// Output convs start at zero, which would hide every upstream gradient.
fn randomize_zero_weights(params: &mut Params<f64>, s: u64) {
    let mut rng = seed::rng(s);
    for i in 0..params.len() {
        if params.name(i).ends_with(".w") && params.get(i).data().iter().all(|v| *v == 0.0) {
            params.get_mut(i).data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.05..0.05));
        }
    }
}

fn c5() -> Result<(bool, String)> {
    let spec = BaseModelSpec::default();
    let mut params = BaseModel::build(spec)?.params.cast::<f64>();
    randomize_zero_weights(&mut params, 51);
    let n = 6;
    let mut rng = seed::rng(52);
    let vel = uniform(3 * n * n * n, -0.8, 0.8, &mut rng);
    let mag = uniform(n * n * n, 0.0, 1.0, &mut rng);
    let target = uniform(3 * 8 * n * n * n, -0.5, 0.5, &mut rng);
    let weights: Vec<f64> = (0..target.len()).map(|i| if i % 3 == 0 { 0.2 } else { 1.0 }).collect();
    let report = grad_check(
        &params,
        |p| {
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::new(vec![3, n, n, n], vel.clone())?)?;
            let m = tape.constant(Tensor::new(vec![1, n, n, n], mag.clone())?)?;
            let out = base_forward(&spec, p, &mut tape, v, m).map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => panic!("{other}"),
            })?;
            let l = tape.weighted_sq_error(out, target.clone(), weights.clone())?;
            Ok((tape, l))
        },
        &GradCheckConfig {
            step: 1e-6,
            samples: 200,
            tolerance: 1e-4,
            seed: 53,
        },
    )?;
    let gaps = primitive_adjoint_gaps(3)?;
    let (worst_op, worst_gap) = gaps.iter().fold(("", 0.0f64), |a, &(n, g)| if g > a.1 { (n, g) } else { a });
    Ok((
        report.passed && worst_gap < 1e-6,
        format!(
            "grad check {} params, max rel {:.2e} ({}); {} ops, worst adjoint gap {worst_gap:.2e} ({worst_op})",
            report.checked,
            report.max_rel_error,
            report.worst_param,
            gaps.len()
        ),
    ))
}

fn c6() -> Result<(bool, String)> {
    let mut rng = seed::rng(61);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.gen_range(1..=Compartment::ALL.len());
        let counts: Vec<(Compartment, usize)> = Compartment::ALL[..k].iter().map(|&c| (c, rng.gen_range(1..64))).collect();
        let w = compartment_weights(&BatchComposition { counts: counts.clone() })?;
        let totals: Vec<f64> = w.iter().zip(&counts).map(|((_, w), (_, s))| w * *s as f64).collect();
        for t in &totals {
            worst = worst.max((t - totals[0]).abs() / totals[0]);
        }
    }
    let balanced = (1..=Compartment::ALL.len()).all(|k| {
        let counts = Compartment::ALL[..k].iter().map(|&c| (c, 8)).collect();
        compartment_weights(&BatchComposition { counts }).is_ok_and(|w| w.iter().all(|(_, w)| *w == 1.0))
    });
    let two_six = compartment_weights(&BatchComposition {
        counts: vec![(Compartment::Aortic, 2), (Compartment::Cardiac, 6)],
    })?;
    let (wa, wb) = (two_six[0].1, two_six[1].1);
    let exact = (wa - 1.5).abs() < 1e-12 && (wb - 0.5).abs() < 1e-12;
    Ok((
        worst < 1e-12 && balanced && exact,
        format!("max rel imbalance {worst:.2e} over 100 batches; balanced unit weights {balanced}; (2,6) -> ({wa}, {wb})"),
    ))
}

fn random_volume(n: usize, s: u64) -> Result<(VectorField, VectorField, FluidMask)> {
    let g = VolumeGrid::cubic(n, 1.0)?;
    let mut rng = seed::rng(s);
    let mut field = |a: f32| {
        let mut c = || (0..g.len()).map(|_| rng.gen_range(-a..a)).collect::<Vec<f32>>();
        let (x, y, z) = (c(), c(), c());
        VectorField::new(g, x, y, z)
    };
    let reference = field(100.0)?;
    let pred = field(120.0)?;
    let mut mask: Vec<bool> = (0..g.len()).map(|_| rng.gen_bool(0.6)).collect();
    mask[..2].fill(true);
    Ok((pred, reference, FluidMask::new(g, mask)?))
}

fn max_diff(a: Option<[f64; 3]>, b: Option<[f64; 3]>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => a.iter().zip(&b).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    }
}

fn c7() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for s in 0..50 {
        let (p, r, m) = random_volume(6, 700 + s)?;
        let naive = metrics_naive(&p, &r, &m)?;
        let rmse = rmse_regions(&p, &r, &m)?;
        let reg = regression_stats(&p, &r, &m)?;
        worst = worst
            .max((relative_error(&p, &r, &m)? - naive.re).abs())
            .max(max_diff(rmse.fluid, naive.rmse_fluid))
            .max(max_diff(rmse.nonfluid, naive.rmse_nonfluid))
            .max(max_diff(Some(reg.k), Some(naive.k)))
            .max(max_diff(Some(reg.r2), Some(naive.r2)));
    }
    let (_, r, m) = random_volume(6, 799)?;
    let identity = relative_error(&r, &r, &m)?;
    let half = regression_stats(&r.scaled(0.5), &r, &m)?;
    let half_err = max_diff(Some(half.k), Some([0.5; 3])).max(max_diff(Some(half.r2), Some([1.0; 3])));
    Ok((
        worst < 1e-12 && identity == 0.0 && half_err < 1e-12,
        format!("max deviation {worst:.2e} over 50 volumes; identity RE {identity}; half-scale k/R² error {half_err:.2e}"),
    ))
}

fn random_patch(rng: &mut impl Rng, compartment: Compartment) -> PatchPair {
    PatchPair {
        lr_mag: (0..LR_VOXELS).map(|_| rng.gen_range(0.0..1.0)).collect(),
        lr_vel: (0..3 * LR_VOXELS).map(|_| rng.gen_range(-60.0..60.0)).collect(),
        hr_vel: (0..3 * HR_VOXELS).map(|_| rng.gen_range(-60.0..60.0)).collect(),
        hr_mask: (0..HR_VOXELS).map(|_| rng.gen_bool(0.4)).collect(),
        venc: 100.0,
        compartment,
        source_model: 0,
    }
}

fn small_model(s: u64) -> Result<BaseModel> {
    Ok(BaseModel::build(BaseModelSpec {
        channels: 4,
        n_blocks_low: 1,
        n_blocks_high: 1,
        global_skip: false,
        seed: s,
        ..Default::default()
    })?)
}

fn c8() -> Result<(bool, String)> {
    let mut rng = seed::rng(81);
    let p = random_patch(&mut rng, Compartment::Aortic);
    let predict = |b: &Bagging| b.predict(&p.lr_vel, &p.lr_mag, p.venc);

    let m = small_model(1)?;
    let single = m.forward_sr(&p.lr_vel, &p.lr_mag, p.venc)?;
    let mut identical = true;
    for n in [2, 3, 5] {
        let out = predict(&Bagging::new(vec![m.clone(); n])?)?;
        identical &= single.iter().zip(&out).all(|(a, b)| a.to_bits() == b.to_bits());
    }

    let models: Vec<BaseModel> = (1..=3).map(small_model).collect::<Result<_>>()?;
    let reference = predict(&Bagging::new(models.clone())?)?;
    let mut invariant = true;
    for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
        let out = predict(&Bagging::new(perm.iter().map(|&i| models[i].clone()).collect())?)?;
        invariant &= out.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let distinct_members = reference != single;

    let idx: Vec<usize> = (0..10_000).collect();
    let sample = bootstrap_dataset(&idx, 82)?;
    let frac = distinct_fraction(&sample);
    let frac_ok = (0.61..=0.65).contains(&frac) && frac == distinct_count_naive(&sample) as f64 / 1e4;

    let patches: Vec<PatchPair> = (0..6)
        .map(|i| random_patch(&mut rng, if i % 2 == 0 { Compartment::Aortic } else { Compartment::Cardiac }))
        .collect();
    let refs: Vec<&PatchPair> = patches.iter().collect();
    let bases = vec![small_model(4)?, small_model(5)?];
    let before = bases.clone();
    let mut meta = MetaModel::build(MetaModelSpec {
        n_base: 2,
        channels: 4,
        seed: 6,
        ..Default::default()
    })?;
    let meta_before = meta.clone();
    let cfg = TrainConfig {
        lr0: 1e-3,
        epochs: 2,
        batch_size: 2,
        seed: 7,
        record_wall_time: false,
        ..Default::default()
    };
    train_meta(&mut meta, &bases, &refs[..4], &refs[4..], &cfg)?;
    let frozen = bases == before && meta != meta_before;

    Ok((
        identical && invariant && distinct_members && frac_ok && frozen,
        format!(
            "identical copies bit-equal {identical}; permutation invariant {invariant}; \
             bootstrap distinct fraction {frac:.4}; bases unchanged by meta training {frozen}"
        ),
    ))
}

/// Fluid RE of `model` and of trilinear interpolation on `patches`.
fn re_vs_trilinear(model: &dyn SuperResolver, patches: &[&PatchPair]) -> Result<(f64, f64)> {
    Ok((
        evaluate_patches(model, patches, "pooled")?.re,
        evaluate_patches(&TrilinearStub, patches, "pooled")?.re,
    ))
}

fn desk_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        ..Default::default()
    };
    cfg.phantom.families = vec![Family::TubeJet, Family::BranchSlow, Family::CavityVortex];
    cfg.train.record_wall_time = false;
    cfg
}

fn c9() -> Result<(bool, String)> {
    let t = Instant::now();
    let mut cfg = desk_config(9);
    cfg.phantom.models_per_family = 6;
    cfg.phantom.frames = 5;
    cfg.model.n_blocks_low = 1;
    cfg.model.n_blocks_high = 1;
    cfg.train.epochs = 15;
    cfg.train.lr0 = 3e-4;
    cfg.train.batch_size = 8;
    let data = build_dataset(&cfg, &cfg.phantom.families)?;
    let dir = tempfile::tempdir()?;
    let (trained, _) = train_configured(&cfg, &data, dir.path())?;
    let test = data.refs(data.split()?.indices(SplitKind::Test));
    let (re, tri) = re_vs_trilinear(trained.resolver(), &test)?;
    let gain = 1.0 - re / tri;
    let secs = t.elapsed().as_secs_f64();
    Ok((
        gain >= 0.2 && secs <= 3600.0,
        format!(
            "{} patches, {} test; model RE {re:.4} vs trilinear {tri:.4} ({:.1}% lower, need 20%) in {:.0} min",
            data.patches.len(),
            test.len(),
            gain * 100.0,
            secs / 60.0
        ),
    ))
}

fn c10() -> Result<(bool, String)> {
    let families = [Family::TubeJet, Family::BranchSlow, Family::CavityVortex];
    let mut isolated = Vec::new();
    let mut combined = Vec::new();
    let mut bagged = Vec::new();
    for s in 0..3 {
        let mut cfg = desk_config(100 + s);
        cfg.phantom.models_per_family = 6;
        cfg.phantom.size = 40;
        cfg.phantom.frames = 1;
        cfg.model.channels = 8;
        cfg.model.n_blocks_low = 1;
        cfg.model.n_blocks_high = 1;
        cfg.train.epochs = 6;
        cfg.train.lr0 = 3e-4;
        cfg.train.batch_size = 8;
        let unseen = build_dataset(&cfg, &[Family::DualLumen])?;
        let unseen: Vec<&PatchPair> = unseen.patches.iter().collect();
        ensure!(!unseen.is_empty(), "no dual-lumen patches");
        let dir = tempfile::tempdir()?;
        let fit = |cfg: &ExperimentConfig, data: &Dataset, sub: &str| -> Result<f64> {
            let out = dir.path().join(sub);
            std::fs::create_dir_all(&out)?;
            let (trained, _) = train_configured(cfg, data, &out)?;
            Ok(evaluate_patches(trained.resolver(), &unseen, "dual-lumen")?.re)
        };
        for f in families {
            let single = ExperimentConfig {
                phantom: f4flow::config::PhantomSection {
                    families: vec![f],
                    ..cfg.phantom.clone()
                },
                ..cfg.clone()
            };
            let data = build_dataset(&single, &[f])?;
            isolated.push(fit(&single, &data, f.name())?);
        }
        let data = build_dataset(&cfg, &families)?;
        combined.push(fit(&cfg, &data, "combined")?);
        let mut bag = cfg.clone();
        bag.ensemble.kind = Some(EnsembleKind::Bagging);
        bag.ensemble.n_base = 3;
        bagged.push(fit(&bag, &data, "bagging")?);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mi, mc, mb) = (mean(&isolated), mean(&combined), mean(&bagged));
    Ok((
        mi > mc && mb <= mc + 0.01,
        format!("mean dual-lumen RE over 3 seeds: isolated {mi:.4}, combined {mc:.4}, bagging-3 {mb:.4}"),
    ))
}

fn tree(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir)?.to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path)?);
            }
        }
    }
    Ok(out)
}

fn c11() -> Result<(bool, String)> {
    let mut cfg = desk_config(11);
    cfg.phantom.models_per_family = 1;
    cfg.phantom.size = 32;
    cfg.phantom.frames = 2;
    cfg.model.channels = 4;
    cfg.model.n_blocks_low = 1;
    cfg.model.n_blocks_high = 1;
    cfg.train.epochs = 2;
    cfg.ensemble.kind = Some(EnsembleKind::Stacking);
    cfg.ensemble.meta_channels = 4;
    cfg.ensemble.meta_epochs = 1;
    cfg.eval.unseen_family = Some(Family::DualLumen);
    let a = tempfile::tempdir()?;
    let b = tempfile::tempdir()?;
    f4flow::commands::run_config(&cfg, a.path())?;
    f4flow::commands::run_config(&cfg, b.path())?;
    let (ta, tb) = (tree(a.path())?, tree(b.path())?);
    let names: Vec<&String> = ta.keys().collect();
    let differing: Vec<&String> = ta.iter().filter(|(k, v)| tb.get(*k) != Some(v)).map(|(k, _)| k).collect();
    let kinds_present = ["report.csv", "data.f4p", "meta.f4w"].iter().all(|f| ta.contains_key(*f))
        && names.iter().any(|n| n.starts_with("member") && n.ends_with(".f4w"));
    Ok((
        differing.is_empty() && ta.len() == tb.len() && kinds_present,
        format!(
            "{} files compared (weights, dataset, reports, logs); differing: {:?}",
            ta.len(),
            differing
        ),
    ))
}

fn c12() -> Result<(bool, String)> {
    let grid = VolumeGrid::cubic(32, Family::DualLumen.default_dx())?;
    let native = generate_phantom(&PhantomSpec::default_for(Family::DualLumen, grid, 12))?;
    let noise = NoiseSpec::new(12.0, 13);
    let oracle = recover_native_eval(&native, &OracleStub::new(native.velocity.clone()), &noise)?;
    let tri = recover_native_eval(&native, &TrilinearStub, &noise)?;
    let oracle_ok = oracle.re == 0.0 && oracle.k == [1.0; 3] && oracle.r2 == [1.0; 3];
    let tri_ok = tri.re.is_finite() && tri.re > 0.0 && tri.model == "trilinear";
    ensure!(oracle.n_fluid > 0, "native phantom has no fluid");
    Ok((
        oracle_ok && tri_ok,
        format!(
            "oracle RE {} k {:?} R² {:?}; {} RE {:.4}",
            oracle.re, oracle.k, oracle.r2, tri.model, tri.re
        ),
    ))
}
