//! Numerically-stable primitives shared across the crate.

/// log(Σ exp(x_i)) with the max subtracted first.
///
/// Returns −∞ for an empty slice or when every entry is −∞.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        // all -inf (or empty): the sum is 0; +inf propagates as-is
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Softmax in log space: exp(x_i − logsumexp(x)).
///
/// Output entries are positive and sum to 1 for any finite input.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| (x - lse).exp()).collect()
}

/// log((1/n) Σ exp(x_i)).
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}
