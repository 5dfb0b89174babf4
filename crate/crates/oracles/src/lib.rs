//! Slow, obviously-correct reference implementations. Nothing here calls
//! into the numerical code of `f4flow-core`; only its plain data containers
//! are shared, so agreement between the two is evidence of correctness.
//!
//! Inputs are expected to be small (at most 16³).

mod adam;
mod dft;
mod grad;
mod metrics;
mod nn;
mod stats;

pub use adam::AdamReference;
pub use dft::{dft3_direct, kspace_crop_direct, signed_frequencies};
pub use grad::finite_diff_grad;
pub use metrics::{metrics_naive, OracleError};
pub use nn::{conv3d_naive, refine2_naive, upsample2_naive};
pub use stats::{distinct_count_naive, expected_distinct_fraction};

/// Worst-case disagreement between two equally long arrays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub max_abs: f64,
    /// Largest absolute deviation divided by the largest reference magnitude.
    pub max_rel: f64,
    /// Index of the largest absolute deviation.
    pub worst: usize,
}

impl OracleReport {
    pub fn compare(actual: &[f64], reference: &[f64]) -> Self {
        assert_eq!(actual.len(), reference.len(), "compared arrays differ in length");
        let mut max_abs = 0.0f64;
        let mut worst = 0;
        let mut scale = 0.0f64;
        for i in 0..actual.len() {
            let d = (actual[i] - reference[i]).abs();
            if d > max_abs || d.is_nan() {
                max_abs = d;
                worst = i;
            }
            scale = scale.max(reference[i].abs());
        }
        let max_rel = if scale > 0.0 { max_abs / scale } else { max_abs };
        Self { max_abs, max_rel, worst }
    }

    pub fn compare_f32(actual: &[f32], reference: &[f64]) -> Self {
        let a: Vec<f64> = actual.iter().map(|&v| v as f64).collect();
        Self::compare(&a, reference)
    }

    pub fn within(&self, rel: f64) -> bool {
        self.max_rel <= rel
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_locates_worst() {
        let r = OracleReport::compare(&[1.0, 2.5, -4.0], &[1.0, 2.0, -4.0]);
        assert_eq!(r.worst, 1);
        assert_eq!(r.max_abs, 0.5);
        assert_eq!(r.max_rel, 0.125);
        assert!(r.max_abs >= 0.0 && r.max_rel >= 0.0);
    }
}
