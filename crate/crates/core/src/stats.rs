//! Order-independent summaries used by the evaluation reports.

/// Neumaier-compensated sum.
pub fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut total = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = total + v;
        if total.abs() >= v.abs() {
            comp += (total - t) + v;
        } else {
            comp += (v - t) + total;
        }
        total = t;
    }
    total + comp
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    sum(values.iter().copied()) / values.len() as f64
}

/// Nearest-rank quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Mean of the `ceil(frac * n)` smallest values.
pub fn tail_mean(values: &[f64], frac: f64) -> f64 {
    let s = sorted(values);
    let count = ((frac * s.len() as f64).ceil() as usize).clamp(1, s.len());
    mean(&s[..count])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tail_mean_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(tail_mean(&v, 0.05), 3.0);
        assert_eq!(tail_mean(&[7.0; 10], 0.05), 7.0);
    }

    #[test]
    fn compensated_sum_is_exact_on_cancellation() {
        assert_eq!(sum([1e16, 1.0, -1e16]), 1.0);
    }

    #[test]
    fn nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(quantile_sorted(&v, 0.05), 1.0);
        assert_eq!(quantile_sorted(&v, 0.95), 19.0);
        assert_eq!(quantile_sorted(&v, 1.0), 20.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
    }

    proptest! {
        #[test]
        fn tail_never_exceeds_mean(v in proptest::collection::vec(-1e6f64..1e6, 1..200)) {
            prop_assert!(tail_mean(&v, 0.05) <= mean(&v) + 1e-9 * (1.0 + mean(&v).abs()));
        }
    }
}
