/// Nearest-rank percentile: the value at 1-based rank `ceil(fraction * n)`
/// of the ascending order, with rank clamped to `[1, n]`. `None` for empty
/// input.
pub fn nearest_rank(values: &[f64], fraction: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    Some(sorted[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks() {
        assert_eq!(nearest_rank(&[], 0.5), None);
        assert_eq!(nearest_rank(&[0.9, 0.1], 0.5), Some(0.1));
        assert_eq!(nearest_rank(&[0.9, 0.1], 0.51), Some(0.9));
        assert_eq!(nearest_rank(&[3.0, 1.0, 2.0], 0.0), Some(1.0));
        assert_eq!(nearest_rank(&[3.0, 1.0, 2.0], 1.0), Some(3.0));
    }
}
