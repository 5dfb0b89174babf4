/// `1 − (1 − 1/n)^n`: expected share of distinct items in a size-`n`
/// bootstrap resample.
pub fn expected_distinct_fraction(n: usize) -> f64 {
    1.0 - (1.0 - 1.0 / n as f64).powf(n as f64)
}

pub fn distinct_count_naive(sample: &[usize]) -> usize {
    let mut s = sample.to_vec();
    s.sort_unstable();
    s.dedup();
    s.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limits() {
        assert_eq!(expected_distinct_fraction(1), 1.0);
        assert!((expected_distinct_fraction(10_000) - 0.63214).abs() < 1e-4);
        assert_eq!(distinct_count_naive(&[3, 1, 3, 3, 0]), 3);
    }
}
