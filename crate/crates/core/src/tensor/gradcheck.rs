use rand::Rng;

use super::{Params, Tape, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Scalars to probe; every parameter is probed when there are fewer.
    pub samples: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            samples: 200,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest `|a − n| / (|a| + |n| + 1e-12)` seen.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub passed: bool,
}

/// Compares reverse-mode gradients of `forward` (which must build a tape and
/// return its scalar loss) against central differences on sampled
/// parameters.
pub fn grad_check<F>(
    params: &Params<f64>,
    forward: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Params<f64>) -> Result<(Tape<f64>, Var), TensorError>,
{
    let (tape, loss) = forward(params)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Option<Vec<f64>>> = (0..params.len()).map(|i| grads.param(i)).collect();
    drop(tape);

    let total = params.count();
    let mut probes: Vec<(usize, usize)> = Vec::new();
    if total <= cfg.samples {
        for i in 0..params.len() {
            probes.extend((0..params.get(i).len()).map(|k| (i, k)));
        }
    } else {
        let mut rng = crate::seed::rng(cfg.seed);
        let offsets: Vec<usize> = params
            .tensors()
            .iter()
            .scan(0, |acc, t| {
                let start = *acc;
                *acc += t.len();
                Some(start)
            })
            .collect();
        for _ in 0..cfg.samples {
            let flat = rng.gen_range(0..total);
            let i = offsets.partition_point(|&o| o <= flat) - 1;
            probes.push((i, flat - offsets[i]));
        }
    }

    let eval = |p: &Params<f64>| -> Result<f64, TensorError> {
        let (tape, loss) = forward(p)?;
        Ok(tape.value(loss).data()[0])
    };
    let mut report = GradCheckReport {
        checked: probes.len(),
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        passed: true,
    };
    let mut work = params.clone();
    for (i, k) in probes {
        let orig = work.get(i).data()[k];
        work.get_mut(i).data_mut()[k] = orig + cfg.step;
        let plus = eval(&work)?;
        work.get_mut(i).data_mut()[k] = orig - cfg.step;
        let minus = eval(&work)?;
        work.get_mut(i).data_mut()[k] = orig;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[i].as_ref().map_or(0.0, |g| g[k]);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        if rel > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = rel;
            report.worst_param = params.name(i).to_string();
            report.worst_index = k;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < cfg.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identity_network_is_exact() {
        let mut params = Params::new();
        params.push("w", Tensor::new(vec![5], vec![0.5, -1.0, 2.0, 0.25, 3.0]).unwrap());
        let coeffs = vec![1.0, -2.0, 0.5, 4.0, 1.5];
        let report = grad_check(
            &params,
            |p| {
                let mut tape = Tape::new();
                let w = tape.param(0, p.get(0))?;
                let l = tape.dot_const(w, coeffs.clone())?;
                Ok((tape, l))
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 5);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.worst_param, "w");
    }
}
