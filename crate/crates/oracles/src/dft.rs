use std::f64::consts::PI;

/// Frequencies held by an `n`-point spectrum, in index order:
/// `0, 1, ..., then the negative ones`.
pub fn signed_frequencies(n: usize) -> Vec<i64> {
    let n = n as i64;
    // Even sizes put the Nyquist bin on the negative side.
    (0..n).map(|j| if j <= (n - 1) / 2 { j } else { j - n }).collect()
}

/// Triple-sum 3D DFT of an x-fastest array,
/// `X[k] = Σ_n x[n] exp(∓2πi k·n / N)`, unnormalized.
pub fn dft3_direct(re: &[f64], im: &[f64], dims: [usize; 3], inverse: bool) -> (Vec<f64>, Vec<f64>) {
    let [nx, ny, nz] = dims;
    let len = nx * ny * nz;
    assert_eq!(re.len(), len);
    assert_eq!(im.len(), len);
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out_re = vec![0.0; len];
    let mut out_im = vec![0.0; len];
    for kz in 0..nz {
        for ky in 0..ny {
            for kx in 0..nx {
                let (mut sr, mut si) = (0.0, 0.0);
                for z in 0..nz {
                    for y in 0..ny {
                        for x in 0..nx {
                            let phase = sign
                                * 2.0
                                * PI
                                * ((kx * x) as f64 / nx as f64
                                    + (ky * y) as f64 / ny as f64
                                    + (kz * z) as f64 / nz as f64);
                            let (s, c) = phase.sin_cos();
                            let i = x + nx * (y + ny * z);
                            sr += re[i] * c - im[i] * s;
                            si += re[i] * s + im[i] * c;
                        }
                    }
                }
                let k = kx + nx * (ky + ny * kz);
                out_re[k] = sr;
                out_im[k] = si;
            }
        }
    }
    (out_re, out_im)
}

/// Downsampling by `factor` through the direct DFT: keep the frequencies the
/// small grid can represent, inverse-transform on the small grid and divide
/// by the large voxel count so constants are preserved.
pub fn kspace_crop_direct(
    re: &[f64],
    im: &[f64],
    dims: [usize; 3],
    factor: usize,
) -> (Vec<f64>, Vec<f64>, [usize; 3]) {
    let small = dims.map(|d| d / factor);
    let (sr, si) = dft3_direct(re, im, dims, false);
    let freqs: Vec<Vec<i64>> = small.iter().map(|&m| signed_frequencies(m)).collect();
    let big_index = |k: i64, n: usize| k.rem_euclid(n as i64) as usize;
    let n_small = small[0] * small[1] * small[2];
    let mut cr = vec![0.0; n_small];
    let mut ci = vec![0.0; n_small];
    for z in 0..small[2] {
        for y in 0..small[1] {
            for x in 0..small[0] {
                let src = big_index(freqs[0][x], dims[0])
                    + dims[0] * (big_index(freqs[1][y], dims[1]) + dims[1] * big_index(freqs[2][z], dims[2]));
                let dst = x + small[0] * (y + small[1] * z);
                cr[dst] = sr[src];
                ci[dst] = si[src];
            }
        }
    }
    let (mut or, mut oi) = dft3_direct(&cr, &ci, small, true);
    let norm = (dims[0] * dims[1] * dims[2]) as f64;
    or.iter_mut().chain(oi.iter_mut()).for_each(|v| *v /= norm);
    (or, oi, small)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_layout() {
        assert_eq!(signed_frequencies(4), vec![0, 1, -2, -1]);
        assert_eq!(signed_frequencies(5), vec![0, 1, 2, -2, -1]);
    }

    #[test]
    fn delta_and_constant() {
        let dims = [4, 4, 4];
        let mut re = vec![0.0; 64];
        re[0] = 1.0;
        let (r, i) = dft3_direct(&re, &[0.0; 64], dims, false);
        assert!(r.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(i.iter().all(|v| v.abs() < 1e-12));

        let (r, i) = dft3_direct(&[2.5; 64], &[0.0; 64], dims, false);
        assert!((r[0] - 160.0).abs() < 1e-10);
        assert!(r[1..].iter().chain(&i).all(|v| v.abs() < 1e-10));

        let (c, _, small) = kspace_crop_direct(&[2.5; 64], &[0.0; 64], dims, 2);
        assert_eq!(small, [2, 2, 2]);
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }
}
