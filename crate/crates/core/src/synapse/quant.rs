use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const W_MAX: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightBits {
    One,
    Eight,
}

impl WeightBits {
    pub fn from_bits(bits: u8) -> Result<Self> {
        match bits {
            1 => Ok(WeightBits::One),
            8 => Ok(WeightBits::Eight),
            b => Err(Error::InvalidParameter(format!("weight bits must be 1 or 8, got {b}"))),
        }
    }

    pub fn bits(self) -> u8 {
        match self {
            WeightBits::One => 1,
            WeightBits::Eight => 8,
        }
    }
}

/// Index of the nearest 8-bit level, rounding halves away from zero.
pub fn level_index(w: f64) -> u8 {
    let c = w.clamp(-W_MAX, W_MAX);
    ((c + W_MAX) * 255.0 / (2.0 * W_MAX)).round() as u8
}

/// Value of 8-bit level `k`: `-1 + k·2/255`, evaluated as `(2k - 255)/255`.
pub fn level_value(k: u8) -> f64 {
    (2.0 * k as f64 - 255.0) / 255.0 * W_MAX
}

pub fn quantize_value<T: Scalar>(w: T, bits: WeightBits) -> T {
    match bits {
        WeightBits::Eight => T::of(level_value(level_index(w.f64()))),
        WeightBits::One => {
            if w >= T::zero() {
                T::one()
            } else {
                -T::one()
            }
        }
    }
}

pub fn quantize<T: Scalar>(w: ArrayView2<'_, T>, bits: WeightBits) -> Array2<T> {
    w.mapv(|v| quantize_value(v, bits))
}

/// Clipped straight-through estimator: identity inside `[-w_max, w_max]`, zero outside.
pub fn ste_backward<T: Scalar>(grad_wq: ArrayView2<'_, T>, w_real: ArrayView2<'_, T>) -> Array2<T> {
    let lim = T::of(W_MAX);
    Zip::from(grad_wq)
        .and(w_real)
        .map_collect(|&g, &w| if w.abs() <= lim { g } else { T::zero() })
}
