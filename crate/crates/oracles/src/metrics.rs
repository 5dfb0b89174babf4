use f4flow_core::eval::EvalReport;
use f4flow_core::volume::{FluidMask, VectorField};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleError {
    GridMismatch,
    EmptyFluid,
    ZeroReference(usize),
}

impl std::fmt::Display for OracleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleError::GridMismatch => write!(f, "grids differ"),
            OracleError::EmptyFluid => write!(f, "no fluid voxels"),
            OracleError::ZeroReference(c) => write!(f, "reference component {c} is zero"),
        }
    }
}

impl std::error::Error for OracleError {}

/// Relative error, regional RMSE and through-origin regression computed
/// with one plain loop per quantity over (x, y, z).
pub fn metrics_naive(pred: &VectorField, reference: &VectorField, mask: &FluidMask) -> Result<EvalReport, OracleError> {
    let g = *reference.grid();
    if pred.grid().dims() != g.dims() || mask.grid().dims() != g.dims() {
        return Err(OracleError::GridMismatch);
    }
    let [nx, ny, nz] = g.dims();
    let p = pred.components();
    let r = reference.components();
    let fluid = mask.fluid();
    let mut voxels = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                voxels.push(x + nx * y + nx * ny * z);
            }
        }
    }

    let mut re_sum = 0.0;
    let mut n_fluid = 0usize;
    for &i in &voxels {
        if !fluid[i] {
            continue;
        }
        let dx = p[0][i] as f64 - r[0][i] as f64;
        let dy = p[1][i] as f64 - r[1][i] as f64;
        let dz = p[2][i] as f64 - r[2][i] as f64;
        let err = (dx * dx + dy * dy + dz * dz).sqrt();
        let speed = ((r[0][i] as f64).powi(2) + (r[1][i] as f64).powi(2) + (r[2][i] as f64).powi(2)).sqrt();
        re_sum += (err / (speed + 1e-4)).tanh();
        n_fluid += 1;
    }
    if n_fluid == 0 {
        return Err(OracleError::EmptyFluid);
    }
    let n_nonfluid = voxels.len() - n_fluid;

    let rmse = |want_fluid: bool, count: usize| -> Option<[f64; 3]> {
        if count == 0 {
            return None;
        }
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for &i in &voxels {
                if fluid[i] == want_fluid {
                    s += (p[c][i] as f64 - r[c][i] as f64).powi(2);
                }
            }
            *o = (s / count as f64).sqrt();
        }
        Some(out)
    };

    let mut k = [0.0; 3];
    let mut r2 = [0.0; 3];
    for c in 0..3 {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut mean = 0.0;
        for &i in &voxels {
            if fluid[i] {
                num += r[c][i] as f64 * p[c][i] as f64;
                den += r[c][i] as f64 * r[c][i] as f64;
                mean += p[c][i] as f64;
            }
        }
        if den == 0.0 {
            return Err(OracleError::ZeroReference(c));
        }
        k[c] = num / den;
        mean /= n_fluid as f64;
        let mut ss_res = 0.0;
        let mut ss_tot = 0.0;
        for &i in &voxels {
            if fluid[i] {
                ss_res += (p[c][i] as f64 - k[c] * r[c][i] as f64).powi(2);
                ss_tot += (p[c][i] as f64 - mean).powi(2);
            }
        }
        r2[c] = if ss_tot == 0.0 { 0.0 } else { 1.0 - ss_res / ss_tot };
    }

    Ok(EvalReport {
        model: "naive".into(),
        domain: String::new(),
        n_fluid,
        n_nonfluid,
        re: re_sum / n_fluid as f64,
        rmse_fluid: rmse(true, n_fluid),
        rmse_nonfluid: rmse(false, n_nonfluid),
        k,
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use f4flow_core::volume::VolumeGrid;

    #[test]
    fn identity_and_mismatch() {
        let g = VolumeGrid::cubic(3, 1.0).unwrap();
        let v: Vec<f32> = (0..27).map(|i| i as f32 - 13.5).collect();
        let f = VectorField::new(g, v.clone(), v.clone(), v).unwrap();
        let m = FluidMask::new(g, vec![true; 27]).unwrap();
        let rep = metrics_naive(&f, &f, &m).unwrap();
        assert_eq!(rep.re, 0.0);
        assert_eq!(rep.k, [1.0; 3]);
        assert_eq!(rep.r2, [1.0; 3]);
        assert_eq!(rep.rmse_fluid, Some([0.0; 3]));
        assert_eq!(rep.rmse_nonfluid, None);

        let other = VectorField::zeros(VolumeGrid::cubic(2, 1.0).unwrap());
        assert_eq!(metrics_naive(&other, &f, &m), Err(OracleError::GridMismatch));
    }
}
