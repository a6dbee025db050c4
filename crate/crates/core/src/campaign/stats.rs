//! Order statistics used in every summary: nearest-rank quantiles with the
//! lower median for even-length input.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("no values")]
    Empty,
    #[error("quantile {0} outside [0, 1]")]
    BadQuantile(f64),
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
}

/// Nearest-rank quantile: the element at rank ceil(q·n) (at least 1) of
/// the sorted values.
pub fn quantile(values: &[f64], q: f64) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(StatsError::BadQuantile(q));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // the epsilon keeps q·n that should be integral from rounding up
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

pub fn median(values: &[f64]) -> Result<f64, StatsError> {
    quantile(values, 0.5)
}

/// (combo − baseline) / baseline.
pub fn relative_increase(combo_median: f64, baseline_median: f64) -> Result<f64, StatsError> {
    if baseline_median <= 0.0 || baseline_median.is_nan() {
        return Err(StatsError::NonPositiveBaseline(baseline_median));
    }
    Ok((combo_median - baseline_median) / baseline_median)
}
