use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Batch-mean softmax cross-entropy of output rates, with its gradient w.r.t. the rates.
pub fn softmax_cross_entropy<T: Scalar>(rates: ArrayView2<'_, T>, labels: &[u8]) -> Result<(f64, Array2<T>)> {
    let (batch, classes) = rates.dim();
    if labels.len() != batch {
        return Err(Error::Shape(format!("{} cross-entropy labels for {} samples", labels.len(), batch)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::InvalidParameter(format!("label {bad} out of range for {classes} classes")));
    }
    let mut grad = Array2::zeros((batch, classes));
    let mut loss = 0.0;
    let inv = 1.0 / batch as f64;
    for (b, row) in rates.axis_iter(Axis(0)).enumerate() {
        let z: Vec<f64> = row.iter().map(|v| v.f64()).collect();
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let y = labels[b] as usize;
        loss += (s.ln() + m - z[y]) * inv;
        for c in 0..classes {
            let p = e[c] / s;
            grad[[b, c]] = T::of((p - f64::from(u8::from(c == y))) * inv);
        }
    }
    Ok((loss, grad))
}

/// Per-sample softmax probabilities of output rates.
pub fn softmax_rows<T: Scalar>(rates: ArrayView2<'_, T>) -> Array2<f64> {
    let mut out = rates.mapv(|v| v.f64());
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// `ce + β·kl`.
pub fn total_loss(ce: f64, kl: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        ce
    } else {
        ce + beta * kl
    }
}
