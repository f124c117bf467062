use ndarray::{Array2, ArrayView1, ArrayViewMut2};
use rand::Rng as _;

use crate::rng::Rng;
use crate::scalar::Scalar;

/// Binary spike record, one row per time step and one column per unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrain {
    pub values: Array2<u8>,
}

impl SpikeTrain {
    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn units(&self) -> usize {
        self.values.ncols()
    }

    /// Per-unit firing rate over the whole record.
    pub fn rates(&self) -> Vec<f64> {
        let t = self.steps().max(1) as f64;
        self.values
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|&v| v as f64).sum::<f64>() / t)
            .collect()
    }
}

/// Bernoulli(x) spikes: step t fires unit j when a fresh uniform draw is below `x[j]`.
pub fn poisson_encode<T: Scalar>(x: ArrayView1<'_, T>, steps: usize, rng: &mut Rng) -> SpikeTrain {
    let mut values = Array2::zeros((steps, x.len()));
    for mut row in values.rows_mut() {
        for (v, &p) in row.iter_mut().zip(x.iter()) {
            *v = u8::from(rng.random::<f64>() < p.f64());
        }
    }
    SpikeTrain { values }
}

/// Same draws as [`poisson_encode`], written as 0/1 scalars into `out` (steps × units).
pub fn poisson_encode_into<T: Scalar>(x: ArrayView1<'_, T>, rng: &mut Rng, mut out: ArrayViewMut2<'_, T>) {
    let probs: Vec<f64> = x.iter().map(|p| p.f64()).collect();
    for mut row in out.rows_mut() {
        for (v, &p) in row.iter_mut().zip(&probs) {
            *v = if rng.random::<f64>() < p { T::one() } else { T::zero() };
        }
    }
}
