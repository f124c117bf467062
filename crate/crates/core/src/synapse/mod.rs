//! Quantised synapses and the closed-form statistics of their summed input.

pub mod conv;
pub mod dense;
pub mod quant;

pub use conv::{layer_stats_conv, layer_stats_conv_backward, ConvGeometry, ConvStats};
pub use dense::{layer_stats_backward, layer_stats_dense, synaptic_drive, LayerStats, QuantizedLinear};
pub use quant::{quantize, quantize_value, ste_backward, WeightBits, W_MAX};

use serde::{Deserialize, Serialize};

/// Inputs at or below this rate are treated as silent.
pub const INPUT_MASK_FLOOR: f64 = 1.0 / 512.0;
/// Lower bound on the drive variance before the square root.
pub const VARIANCE_FLOOR: f64 = 1e-20;

/// How a weight enters the drive variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SigmaType {
    /// `w²`, the exact Bernoulli variance.
    #[default]
    Squared,
    /// `|w|`.
    Absolute,
}

impl std::str::FromStr for SigmaType {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "sq" => Ok(SigmaType::Squared),
            "abs" => Ok(SigmaType::Absolute),
            other => Err(crate::Error::InvalidParameter(format!(
                "sigma type must be `sq` or `abs`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for SigmaType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SigmaType::Squared => "sq",
            SigmaType::Absolute => "abs",
        })
    }
}

impl SigmaType {
    pub(crate) fn weight_term<T: crate::Scalar>(self, w: T) -> T {
        match self {
            SigmaType::Squared => w * w,
            SigmaType::Absolute => w.abs(),
        }
    }

    pub(crate) fn weight_term_grad<T: crate::Scalar>(self, w: T) -> T {
        match self {
            SigmaType::Squared => w + w,
            SigmaType::Absolute => {
                if w > T::zero() {
                    T::one()
                } else if w < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}
