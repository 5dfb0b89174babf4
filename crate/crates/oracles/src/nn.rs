/// Direct 3x3x3 cross-correlation with zero padding. `x` is
/// `[cin, d, h, w]`, `weight` is `[cout, cin, 3, 3, 3]`.
pub fn conv3d_naive(x: &[f64], cin: usize, dims: [usize; 3], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let [d, h, w] = dims;
    let cout = bias.len();
    assert_eq!(x.len(), cin * d * h * w);
    assert_eq!(weight.len(), cout * cin * 27);
    let mut out = vec![0.0; cout * d * h * w];
    for o in 0..cout {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for kz in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sz = z as isize + kz as isize - 1;
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sz < 0 || sy < 0 || sx < 0 || sz >= d as isize || sy >= h as isize || sx >= w as isize {
                                        continue;
                                    }
                                    let xi = ((c * d + sz as usize) * h + sy as usize) * w + sx as usize;
                                    let wi = (((o * cin + c) * 3 + kz) * 3 + ky) * 3 + kx;
                                    acc += weight[wi] * x[xi];
                                }
                            }
                        }
                    }
                    out[((o * d + z) * h + y) * w + xx] = acc;
                }
            }
        }
    }
    out
}

/// Source position and weight pairs for one output coordinate of a ×2
/// linear upsampling with half-voxel-centred samples.
fn taps(o: usize, n: usize) -> [(usize, f64); 2] {
    let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = s.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let t = s - lo as f64;
    [(lo, 1.0 - t), (hi, t)]
}

/// Trilinear ×2 upsampling of `[c, d, h, w]` by explicit 8-tap weighting.
pub fn upsample2_naive(x: &[f64], channels: usize, dims: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let mut out = vec![0.0; channels * 8 * d * h * w];
    for c in 0..channels {
        for z in 0..2 * d {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let mut acc = 0.0;
                    for (sz, wz) in taps(z, d) {
                        for (sy, wy) in taps(y, h) {
                            for (sx, wx) in taps(xx, w) {
                                acc += wz * wy * wx * x[((c * d + sz) * h + sy) * w + sx];
                            }
                        }
                    }
                    out[((c * 2 * d + z) * 2 * h + y) * 2 * w + xx] = acc;
                }
            }
        }
    }
    out
}

/// ×2 refinement with coarse voxel `j` at fine voxel `2j`: even fine voxels
/// copy, odd ones average their two coarse neighbours (the last one repeats).
pub fn refine2_naive(x: &[f64], channels: usize, dims: [usize; 3]) -> Vec<f64> {
    let [d, h, w] = dims;
    let pick = |o: usize, n: usize| -> Vec<(usize, f64)> {
        if o % 2 == 0 {
            vec![(o / 2, 1.0)]
        } else if o / 2 + 1 < n {
            vec![(o / 2, 0.5), (o / 2 + 1, 0.5)]
        } else {
            vec![(n - 1, 1.0)]
        }
    };
    let mut out = vec![0.0; channels * 8 * d * h * w];
    for c in 0..channels {
        for z in 0..2 * d {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    let mut acc = 0.0;
                    for &(sz, wz) in &pick(z, d) {
                        for &(sy, wy) in &pick(y, h) {
                            for &(sx, wx) in &pick(xx, w) {
                                acc += wz * wy * wx * x[((c * d + sz) * h + sy) * w + sx];
                            }
                        }
                    }
                    out[((c * 2 * d + z) * 2 * h + y) * 2 * w + xx] = acc;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_line() {
        let out = upsample2_naive(&[0.0, 1.0], 1, [1, 1, 2]);
        assert_eq!(out.len(), 16);
        assert_eq!(&out[..4], &[0.0, 0.25, 0.75, 1.0]);
        let out = refine2_naive(&[0.0, 1.0], 1, [1, 1, 2]);
        assert_eq!(&out[..4], &[0.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn conv_center_tap() {
        let mut w = vec![0.0; 27];
        w[13] = 2.0;
        let x: Vec<f64> = (0..8).map(f64::from).collect();
        let out = conv3d_naive(&x, 1, [2, 2, 2], &w, &[1.0]);
        assert_eq!(out, x.iter().map(|v| 2.0 * v + 1.0).collect::<Vec<_>>());
    }
}
