use crate::error::{Error, Result};

/// Exact Wasserstein-1 distance between two empirical distributions.
///
/// Sizes may differ; the quantile functions are integrated piecewise.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    wasserstein1_sorted(&a, &b)
}

/// As [`wasserstein1`] for inputs already sorted ascending.
pub fn wasserstein1_sorted(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("Wasserstein distance of an empty sample".into()));
    }
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / a.len() as f64);
    }
    // Walk the merged grid of quantile breakpoints i/n and j/m with integer arithmetic.
    let (n, m) = (a.len() as u128, b.len() as u128);
    let total = n * m;
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos: u128 = 0;
    let mut acc = 0.0;
    while pos < total {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        acc += (next - pos) as f64 * (a[i] - b[j]).abs();
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(acc / total as f64)
}

/// Subtracts the sample mean and divides by the population standard deviation.
pub fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidParameter("cannot standardize an empty sample".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() || sd <= 1e-12 * mean.abs() {
        return Err(Error::InvalidParameter(format!("sample has degenerate variance {var}")));
    }
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}
