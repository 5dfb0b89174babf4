//! Synthetic phase-contrast acquisition.
//!
//! A high-resolution [`FlowSample`] is encoded as three complex signals
//! `M * exp(i * pi * v / venc)`, corrupted with zero-mean complex Gaussian
//! noise, reduced to half resolution by cropping the centred block of its
//! 3D spectrum, and decoded back into noisy low-resolution velocities.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::seed;
use crate::volume::{
    ComplexField, FlowSample, FluidMask, ScalarField, VectorField, VolumeError, VolumeGrid,
};

/// Resolution ratio between high- and low-resolution grids.
pub const FACTOR: usize = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("aliasing: |v| = {value} exceeds venc {venc} at voxel {voxel}")]
    Aliasing { voxel: usize, value: f32, venc: f32 },
    #[error("noise sigma must be >= 0, got {0}")]
    NegativeSigma(f64),
    #[error("snr must be > 0, got {0}")]
    BadSnr(f64),
    #[error("dims {0:?} must be even and divisible by factor {1}")]
    BadDims([usize; 3], usize),
    #[error("signals live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Whether noise is added on the high-resolution grid before cropping or on
/// the cropped low-resolution signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseOrder {
    #[default]
    BeforeCrop,
    AfterCrop,
}

/// `snr` is mean fluid magnitude divided by the per-channel noise std.
/// `f64::INFINITY` disables noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub snr: f64,
    pub seed: u64,
    pub order: NoiseOrder,
}

impl NoiseSpec {
    pub fn new(snr: f64, seed: u64) -> Self {
        Self {
            snr,
            seed,
            order: NoiseOrder::default(),
        }
    }

    pub fn noiseless() -> Self {
        Self::new(f64::INFINITY, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    /// Noise-free target on the N³ grid.
    pub hr: FlowSample,
    /// Noisy input on the (N/2)³ grid.
    pub lr: FlowSample,
    /// Per-channel complex noise std that was applied.
    pub sigma: f64,
}

/// One complex signal per velocity component.
pub fn encode_signal(
    velocity: &VectorField,
    magnitude: &ScalarField,
    venc: f32,
) -> Result<[ComplexField; 3], SynthError> {
    if velocity.grid() != magnitude.grid() {
        return Err(SynthError::GridMismatch);
    }
    let grid = *velocity.grid();
    let encode = |comp: &[f32]| -> Result<ComplexField, SynthError> {
        let mut re = Vec::with_capacity(comp.len());
        let mut im = Vec::with_capacity(comp.len());
        for (i, (&v, &m)) in comp.iter().zip(magnitude.values()).enumerate() {
            if v.abs() > venc {
                return Err(SynthError::Aliasing {
                    voxel: i,
                    value: v,
                    venc,
                });
            }
            let phase = PI * v as f64 / venc as f64;
            re.push(m as f64 * phase.cos());
            im.push(m as f64 * phase.sin());
        }
        Ok(ComplexField::new(grid, re, im)?)
    };
    let [vx, vy, vz] = velocity.components();
    Ok([encode(vx)?, encode(vy)?, encode(vz)?])
}

/// `v = venc * atan2(im, re) / pi`; magnitude is the mean modulus of the three
/// signals. A phase of exactly pi decodes to `+venc`.
pub fn decode_signal(
    signals: &[ComplexField; 3],
    venc: f32,
) -> Result<(VectorField, ScalarField), SynthError> {
    let grid = signals[0].grid;
    if signals.iter().any(|s| s.grid != grid) {
        return Err(SynthError::GridMismatch);
    }
    let n = grid.len();
    let mut mag = vec![0.0f64; n];
    let comps: Vec<Vec<f32>> = signals
        .iter()
        .map(|s| {
            (0..n)
                .map(|i| {
                    mag[i] += s.re[i].hypot(s.im[i]);
                    (venc as f64 * s.im[i].atan2(s.re[i]) / PI) as f32
                })
                .collect()
        })
        .collect();
    let [vx, vy, vz]: [Vec<f32>; 3] = comps.try_into().unwrap();
    let magnitude = mag.into_iter().map(|m| (m / 3.0) as f32).collect();
    Ok((
        VectorField::new(grid, vx, vy, vz)?,
        ScalarField::new(grid, magnitude)?,
    ))
}

/// Adds independent `N(0, sigma^2)` samples to the real and imaginary part of
/// every voxel (real first, voxels in linear order).
pub fn add_complex_noise(
    signal: &ComplexField,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<ComplexField, SynthError> {
    if !(sigma >= 0.0) {
        return Err(SynthError::NegativeSigma(sigma));
    }
    let mut out = signal.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    for i in 0..out.re.len() {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        out.re[i] += sigma * a;
        out.im[i] += sigma * b;
    }
    Ok(out)
}

/// In-place unnormalized 3D DFT of an x-fastest array.
pub fn fft3(data: &mut [Complex64], dims: [usize; 3], inverse: bool) {
    let [nx, ny, nz] = dims;
    assert_eq!(data.len(), nx * ny * nz);
    let mut planner = FftPlanner::<f64>::new();
    let mut plan = |n: usize| -> std::sync::Arc<dyn Fft<f64>> {
        if inverse {
            planner.plan_fft_inverse(n)
        } else {
            planner.plan_fft_forward(n)
        }
    };

    // x lines are contiguous.
    let fx = plan(nx);
    for line in data.chunks_exact_mut(nx) {
        fx.process(line);
    }

    let fy = plan(ny);
    let mut buf = vec![Complex64::default(); ny];
    for z in 0..nz {
        for x in 0..nx {
            let base = x + nx * ny * z;
            for y in 0..ny {
                buf[y] = data[base + nx * y];
            }
            fy.process(&mut buf);
            for y in 0..ny {
                data[base + nx * y] = buf[y];
            }
        }
    }

    let fz = plan(nz);
    let mut buf = vec![Complex64::default(); nz];
    let plane = nx * ny;
    for xy in 0..plane {
        for z in 0..nz {
            buf[z] = data[xy + plane * z];
        }
        fz.process(&mut buf);
        for z in 0..nz {
            data[xy + plane * z] = buf[z];
        }
    }
}

/// Signed frequency held by index `j` of an `m`-point spectrum. Even `m`
/// covers `[-m/2, m/2 - 1]`, odd `m` covers `[-(m-1)/2, (m-1)/2]`.
pub fn frequency_of(j: usize, m: usize) -> isize {
    if j < m - m / 2 {
        j as isize
    } else {
        j as isize - m as isize
    }
}

/// Double-precision k-space truncation of a raw x-fastest array: forward DFT,
/// keep the centred `dims / factor` block of frequencies, inverse DFT on the
/// small grid, scale so constants are fixed points. Returns the small dims.
pub fn kspace_truncate_raw(
    data: &[Complex64],
    dims: [usize; 3],
    factor: usize,
) -> Result<(Vec<Complex64>, [usize; 3]), SynthError> {
    if factor == 0 || dims.iter().any(|&d| d % 2 != 0 || d % factor != 0) {
        return Err(SynthError::BadDims(dims, factor));
    }
    let small = dims.map(|d| d / factor);
    let mut spec = data.to_vec();
    fft3(&mut spec, dims, false);

    let wrap = |k: isize, n: usize| k.rem_euclid(n as isize) as usize;
    let maps: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            (0..small[a])
                .map(|j| wrap(frequency_of(j, small[a]), dims[a]))
                .collect()
        })
        .collect();
    let [sx, sy, sz] = small;
    let mut out = vec![Complex64::default(); sx * sy * sz];
    for z in 0..sz {
        for y in 0..sy {
            for x in 0..sx {
                let src = maps[0][x] + dims[0] * (maps[1][y] + dims[1] * maps[2][z]);
                out[x + sx * (y + sy * z)] = spec[src];
            }
        }
    }
    fft3(&mut out, small, true);
    let norm = 1.0 / (dims[0] * dims[1] * dims[2]) as f64;
    for v in out.iter_mut() {
        *v *= norm;
    }
    Ok((out, small))
}

pub fn kspace_truncate(signal: &ComplexField, factor: usize) -> Result<ComplexField, SynthError> {
    let dims = signal.grid.dims();
    let data: Vec<Complex64> = signal
        .re
        .iter()
        .zip(&signal.im)
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect();
    let (out, _) = kspace_truncate_raw(&data, dims, factor)?;
    let grid = signal.grid.coarsened(factor)?;
    Ok(ComplexField::new(
        grid,
        out.iter().map(|c| c.re).collect(),
        out.iter().map(|c| c.im).collect(),
    )?)
}

/// Low-resolution mask: an output voxel is fluid when at least half of its
/// `factor³` block is fluid.
pub fn downsample_mask(mask: &FluidMask, factor: usize) -> Result<FluidMask, SynthError> {
    let hi = *mask.grid();
    let lo = hi.coarsened(factor)?;
    let block = factor * factor * factor;
    let mut out = vec![false; lo.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let [x, y, z] = lo.coords(i);
        let mut count = 0;
        for dz in 0..factor {
            for dy in 0..factor {
                for dx in 0..factor {
                    if mask.fluid()[hi.index(x * factor + dx, y * factor + dy, z * factor + dz)] {
                        count += 1;
                    }
                }
            }
        }
        *o = 2 * count >= block;
    }
    Ok(FluidMask::new(lo, out)?)
}

/// Mean magnitude over fluid voxels (all voxels if the mask is empty).
pub fn mean_fluid_magnitude(sample: &FlowSample) -> f64 {
    let mags = sample.magnitude.values();
    let fluid = sample.mask.fluid();
    let (sum, count) = mags
        .iter()
        .zip(fluid)
        .filter(|(_, f)| **f)
        .fold((0.0f64, 0usize), |(s, c), (m, _)| (s + *m as f64, c + 1));
    if count == 0 {
        mags.iter().map(|m| *m as f64).sum::<f64>() / mags.len() as f64
    } else {
        sum / count as f64
    }
}

/// Noise std for a sample at the requested SNR.
pub fn noise_sigma(sample: &FlowSample, snr: f64) -> Result<f64, SynthError> {
    if !(snr > 0.0) {
        return Err(SynthError::BadSnr(snr));
    }
    Ok(mean_fluid_magnitude(sample) / snr)
}

/// Full high-to-low resolution pipeline. Noise for velocity component `c`
/// comes from stream `c` of `noise.seed`.
pub fn synthesize_pair(hr: &FlowSample, noise: &NoiseSpec) -> Result<SynthPair, SynthError> {
    let dims = hr.grid().dims();
    if dims.iter().any(|d| d % 2 != 0 || d % FACTOR != 0) {
        return Err(SynthError::BadDims(dims, FACTOR));
    }
    let sigma = noise_sigma(hr, noise.snr)?;
    let signals = encode_signal(&hr.velocity, &hr.magnitude, hr.venc)?;
    let mut low = Vec::with_capacity(3);
    for (c, s) in signals.iter().enumerate() {
        let mut rng = seed::rng(seed::derive_seed(noise.seed, c as u64));
        let s = match noise.order {
            NoiseOrder::BeforeCrop => kspace_truncate(&add_complex_noise(s, sigma, &mut rng)?, FACTOR)?,
            NoiseOrder::AfterCrop => add_complex_noise(&kspace_truncate(s, FACTOR)?, sigma, &mut rng)?,
        };
        low.push(s);
    }
    let low: [ComplexField; 3] = low.try_into().unwrap();
    let (velocity, magnitude) = decode_signal(&low, hr.venc)?;
    let mask = downsample_mask(&hr.mask, FACTOR)?;
    let lr = FlowSample::new(magnitude, velocity, mask, hr.venc, hr.compartment, hr.frame)?;
    Ok(SynthPair {
        hr: hr.clone(),
        lr,
        sigma,
    })
}

/// Grid of the low-resolution partner of `hr`.
pub fn low_res_grid(hr: &VolumeGrid) -> Result<VolumeGrid, SynthError> {
    Ok(hr.coarsened(FACTOR)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Compartment;

    fn grid(n: usize) -> VolumeGrid {
        VolumeGrid::cubic(n, 1.0).unwrap()
    }

    fn uniform(g: VolumeGrid, v: [f32; 3], m: f32) -> (VectorField, ScalarField) {
        let n = g.len();
        (
            VectorField::new(g, vec![v[0]; n], vec![v[1]; n], vec![v[2]; n]).unwrap(),
            ScalarField::filled(g, m),
        )
    }

    #[test]
    fn encode_examples() {
        let g = grid(1);
        let (v, m) = uniform(g, [0.0, 50.0, -50.0], 1.0);
        let s = encode_signal(&v, &m, 100.0).unwrap();
        assert_eq!((s[0].re[0], s[0].im[0]), (1.0, 0.0));
        assert!(s[1].re[0].abs() < 1e-15 && (s[1].im[0] - 1.0).abs() < 1e-15);
        let (v, m) = uniform(g, [-50.0, 0.0, 0.0], 0.5);
        let s = encode_signal(&v, &m, 100.0).unwrap();
        assert!(s[0].re[0].abs() < 1e-15 && (s[0].im[0] + 0.5).abs() < 1e-15);
        let (v, m) = uniform(g, [101.0, 0.0, 0.0], 1.0);
        assert!(matches!(encode_signal(&v, &m, 100.0), Err(SynthError::Aliasing { .. })));
    }

    #[test]
    fn decode_examples() {
        let g = grid(1);
        let c = |re, im| ComplexField::new(g, vec![re], vec![im]).unwrap();
        let (v, m) = decode_signal(&[c(0.0, 1.0), c(-1.0, 0.0), c(1.0, 0.0)], 100.0).unwrap();
        assert!((v.vx()[0] - 50.0).abs() < 1e-5);
        assert_eq!(v.vy()[0], 100.0);
        assert_eq!(v.vz()[0], 0.0);
        assert_eq!(m.values()[0], 1.0);
    }

    #[test]
    fn noise_identity_and_determinism() {
        let g = grid(4);
        let s = ComplexField::new(g, vec![0.3; 64], vec![-0.2; 64]).unwrap();
        let mut rng = seed::rng(1);
        assert_eq!(add_complex_noise(&s, 0.0, &mut rng).unwrap(), s);
        let a = add_complex_noise(&s, 0.1, &mut seed::rng(5)).unwrap();
        let b = add_complex_noise(&s, 0.1, &mut seed::rng(5)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            add_complex_noise(&s, -1.0, &mut rng),
            Err(SynthError::NegativeSigma(_))
        ));
    }

    #[test]
    fn truncation_preserves_constants_and_single_modes() {
        let g = grid(8);
        let s = ComplexField::new(g, vec![2.5; 512], vec![-1.0; 512]).unwrap();
        let t = kspace_truncate(&s, 2).unwrap();
        assert_eq!(t.grid.dims(), [4, 4, 4]);
        assert_eq!(t.grid.dx(), 2.0);
        for i in 0..64 {
            assert!((t.re[i] - 2.5).abs() < 1e-12 && (t.im[i] + 1.0).abs() < 1e-12);
        }

        let re = (0..512)
            .map(|i| (2.0 * PI * g.coords(i)[0] as f64 / 8.0).cos())
            .collect();
        let s = ComplexField::new(g, re, vec![0.0; 512]).unwrap();
        let t = kspace_truncate(&s, 2).unwrap();
        for i in 0..64 {
            let x = t.grid.coords(i)[0] as f64;
            assert!((t.re[i] - (2.0 * PI * x / 4.0).cos()).abs() < 1e-12);
            assert!(t.im[i].abs() < 1e-12);
        }
    }

    #[test]
    fn truncation_rejects_odd_dims() {
        let g = VolumeGrid::new(8, 7, 8, 1.0).unwrap();
        let s = ComplexField::zeros(g);
        assert!(matches!(kspace_truncate(&s, 2), Err(SynthError::BadDims(..))));
        let g = VolumeGrid::new(6, 6, 6, 1.0).unwrap();
        assert_eq!(kspace_truncate(&ComplexField::zeros(g), 2).unwrap().grid.dims(), [3, 3, 3]);
    }

    #[test]
    fn frequency_layout() {
        assert_eq!((0..4).map(|j| frequency_of(j, 4)).collect::<Vec<_>>(), [0, 1, -2, -1]);
        assert_eq!((0..3).map(|j| frequency_of(j, 3)).collect::<Vec<_>>(), [0, 1, -1]);
    }

    #[test]
    fn majority_vote_favours_fluid_on_ties() {
        let g = grid(2);
        let m = FluidMask::new(g, vec![true, true, true, true, false, false, false, false]).unwrap();
        assert!(downsample_mask(&m, 2).unwrap().fluid()[0]);
        let m = FluidMask::new(g, vec![true, true, true, false, false, false, false, false]).unwrap();
        assert!(!downsample_mask(&m, 2).unwrap().fluid()[0]);
    }

    fn lumen_sample(n: usize, v0: [f32; 3], venc: f32) -> FlowSample {
        let g = grid(n);
        let (v, m) = uniform(g, v0, 1.0);
        FlowSample::new(
            m,
            v,
            FluidMask::new(g, vec![true; g.len()]).unwrap(),
            venc,
            Compartment::Aortic,
            0,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_pair_recovers_constant_velocity() {
        let hr = lumen_sample(12, [30.0, -20.0, 10.0], 100.0);
        let pair = synthesize_pair(&hr, &NoiseSpec::noiseless()).unwrap();
        assert_eq!(pair.lr.grid().dims(), [6, 6, 6]);
        assert_eq!(pair.lr.grid().dx(), 2.0);
        assert_eq!(pair.sigma, 0.0);
        for i in 0..pair.lr.grid().len() {
            let v = pair.lr.velocity.at(i);
            assert!((v[0] - 30.0).abs() < 30.0 * 1e-3);
            assert!((v[1] + 20.0).abs() < 20.0 * 1e-3);
            assert!((v[2] - 10.0).abs() < 10.0 * 1e-3);
        }
        assert_eq!(pair.lr.venc, hr.venc);
        assert_eq!(pair.lr.compartment, hr.compartment);
    }

    #[test]
    fn zero_velocity_noise_is_zero_mean() {
        let hr = lumen_sample(16, [0.0; 3], 100.0);
        let pair = synthesize_pair(&hr, &NoiseSpec::new(5.0, 11)).unwrap();
        let v = pair.lr.velocity.vx();
        let n = v.len() as f64;
        let mean = v.iter().map(|x| *x as f64).sum::<f64>() / n;
        let std = (v.iter().map(|x| (*x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(std > 0.0);
        assert!(mean.abs() < 3.0 * std / n.sqrt(), "mean {mean} std {std}");
    }

    #[test]
    fn noise_order_toggle_changes_result() {
        let hr = lumen_sample(8, [10.0, 0.0, 0.0], 100.0);
        let mut spec = NoiseSpec::new(4.0, 3);
        let a = synthesize_pair(&hr, &spec).unwrap();
        spec.order = NoiseOrder::AfterCrop;
        let b = synthesize_pair(&hr, &spec).unwrap();
        assert_ne!(a.lr.velocity, b.lr.velocity);
    }
}
