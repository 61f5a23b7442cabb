//! Log-domain statistics for importance-weighted estimators. Path weights
//! span hundreds of e-folds, so everything aggregates through log-sum-exp;
//! errors come from batch means and reductions are pairwise so that results
//! do not depend on summation order or worker count.

/// log(sum_i exp(a_i)), stable against overflow. Empty input gives -inf.
/// Batch count for every batch-means standard error in the crate. Heavy-tail
/// policy: exponential weights are averaged in log domain, errors come from
/// the spread of per-batch log means over this many contiguous batches.
pub const BATCHES: usize = 32;

pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = pairwise_sum_by(values, |v| (v - m).exp());
    m + s.ln()
}

/// log((1/n) sum exp(a_i)).
pub fn log_mean_exp(values: &[f64]) -> f64 {
    logsumexp(values) - (values.len() as f64).ln()
}

/// Deterministic pairwise reduction of f over the slice (order-insensitive
/// accuracy, fixed association).
pub fn pairwise_sum_by<F: Fn(f64) -> f64 + Copy>(values: &[f64], f: F) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => f(values[0]),
        n => {
            let mid = n / 2;
            pairwise_sum_by(&values[..mid], f) + pairwise_sum_by(&values[mid..], f)
        }
    }
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    pairwise_sum_by(values, |v| v)
}

/// Effective sample size of normalized weights exp(a_i):
/// (sum w)^2 / sum w^2 = exp(2 LSE(a) - LSE(2a)).
pub fn effective_sample_size(log_weights: &[f64]) -> f64 {
    if log_weights.is_empty() {
        return 0.0;
    }
    let doubled: Vec<f64> = log_weights.iter().map(|a| 2.0 * a).collect();
    (2.0 * logsumexp(log_weights) - logsumexp(&doubled)).exp()
}

/// Split into `batches` contiguous chunks and return each chunk's
/// log-mean-exp. Chunk boundaries depend only on lengths, so the batching is
/// deterministic.
pub fn batch_log_means(log_values: &[f64], batches: usize) -> Vec<f64> {
    assert!(batches >= 1 && log_values.len() >= batches);
    let n = log_values.len();
    (0..batches)
        .map(|b| {
            let lo = b * n / batches;
            let hi = (b + 1) * n / batches;
            log_mean_exp(&log_values[lo..hi])
        })
        .collect()
}

/// Plain mean and batch-means standard error.
pub fn mean_and_se(values: &[f64], batches: usize) -> (f64, f64) {
    assert!(batches >= 2 && values.len() >= batches);
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    let bm: Vec<f64> = (0..batches)
        .map(|b| {
            let lo = b * n / batches;
            let hi = (b + 1) * n / batches;
            pairwise_sum(&values[lo..hi]) / (hi - lo) as f64
        })
        .collect();
    let var = bm.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

/// Standard error of a log-domain batch statistic: the spread of per-batch
/// log values around their mean, scaled for the batch count.
pub fn log_domain_se(batch_logs: &[f64]) -> f64 {
    let b = batch_logs.len();
    assert!(b >= 2);
    let mean = batch_logs.iter().sum::<f64>() / b as f64;
    let var = batch_logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (b - 1) as f64;
    (var / b as f64).sqrt()
}
