//! Deterministic accumulation helpers and seed derivation.

/// Pairwise (cascade) summation. Deterministic for a fixed input order and
/// far more accurate than a running sum on long Monte Carlo streams.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Sample mean via pairwise summation.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

/// Unbiased sample variance via pairwise summation of squared deviations.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&sq) / (n as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn std_err(values: &[f64]) -> f64 {
    (variance(values) / values.len() as f64).sqrt()
}

/// Per-replication seed: base seed XOR replication index.
pub fn derive_seed(base: u64, replication: u64) -> u64 {
    base ^ replication
}
