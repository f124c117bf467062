//! Closed-form firing probabilities and their exact backward pass.

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, Axis, Zip};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::special::PROBIT_LOGIT_SLOPE;
use crate::synapse::{layer_stats_conv, layer_stats_conv_backward, ConvGeometry, ConvStats, SigmaType};

/// Below this drive spread the logistic is replaced by a step.
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams {
    pub slope: f64,
    pub eps: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        RateParams {
            slope: PROBIT_LOGIT_SLOPE,
            eps: DEFAULT_EPS,
        }
    }
}

/// A threshold broadcast against a (batch × units) drive.
#[derive(Debug, Clone, PartialEq)]
pub enum Threshold<T> {
    Scalar(T),
    PerUnit(Array1<T>),
    Full(Array2<T>),
}

impl<T: Scalar> Threshold<T> {
    fn at(&self, r: usize, c: usize) -> T {
        match self {
            Threshold::Scalar(t) => *t,
            Threshold::PerUnit(t) => t[c],
            Threshold::Full(t) => t[[r, c]],
        }
    }

    fn check(&self, shape: (usize, usize)) -> Result<()> {
        match self {
            Threshold::Scalar(_) => Ok(()),
            Threshold::PerUnit(t) if t.len() == shape.1 => Ok(()),
            Threshold::Full(t) if t.dim() == shape => Ok(()),
            _ => Err(Error::Shape(format!("threshold does not broadcast to {shape:?}"))),
        }
    }

    pub fn per_unit(&self) -> Option<&Array1<T>> {
        match self {
            Threshold::PerUnit(t) => Some(t),
            _ => None,
        }
    }
}

#[inline]
pub(crate) fn logistic_t<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Saved forward state for [`sigmoid_prob_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidProbSaved<T> {
    pub mean: Array2<T>,
    pub std: Array2<T>,
    pub threshold: Threshold<T>,
    pub params: RateParams,
    pub out: Array2<T>,
}

/// `P = logistic(k(μ−θ)/σ)` where `σ > ε`, otherwise `1[μ−θ > 0]`.
pub fn sigmoid_prob_forward<T: Scalar>(
    mean: &Array2<T>,
    std: &Array2<T>,
    threshold: &Threshold<T>,
    params: RateParams,
) -> Result<(Array2<T>, SigmoidProbSaved<T>)> {
    if mean.dim() != std.dim() {
        return Err(Error::Shape("mean and std shapes differ".into()));
    }
    threshold.check(mean.dim())?;
    let k = T::of(params.slope);
    let eps = T::of(params.eps);
    let mut out = Array2::zeros(mean.raw_dim());
    Zip::indexed(&mut out).and(mean).and(std).for_each(|(r, c), o, &m, &s| {
        let delta = m - threshold.at(r, c);
        *o = if s > eps {
            logistic_t(k * delta / s)
        } else if delta > T::zero() {
            T::one()
        } else {
            T::zero()
        };
    });
    let saved = SigmoidProbSaved {
        mean: mean.clone(),
        std: std.clone(),
        threshold: threshold.clone(),
        params,
        out: out.clone(),
    };
    Ok((out, saved))
}

/// Returns `(∂μ_D, ∂σ_D, ∂θ)`; the threshold gradient has the threshold's own shape.
pub fn sigmoid_prob_backward<T: Scalar>(
    grad_out: ArrayView2<'_, T>,
    saved: &SigmoidProbSaved<T>,
) -> (Array2<T>, Array2<T>, Threshold<T>) {
    let k = T::of(saved.params.slope);
    let eps = T::of(saved.params.eps);
    let dim = saved.mean.raw_dim();
    let mut d_mean = Array2::zeros(dim.clone());
    let mut d_std = Array2::zeros(dim.clone());
    let mut g_t = Array2::zeros(dim);
    Zip::indexed(&mut d_mean)
        .and(&mut d_std)
        .and(&mut g_t)
        .and(grad_out)
        .for_each(|(r, c), dm, ds, gt, &g| {
            let s = saved.std[[r, c]];
            if s > eps {
                let p = saved.out[[r, c]];
                let delta = saved.mean[[r, c]] - saved.threshold.at(r, c);
                let gz = g * p * (T::one() - p);
                let inv = T::one() / s;
                *dm = gz * k * inv;
                *ds = -gz * k * delta * inv * inv;
                *gt = -gz * k * inv;
            }
        });
    let d_threshold = match &saved.threshold {
        Threshold::Scalar(_) => Threshold::Scalar(g_t.sum()),
        Threshold::PerUnit(_) => Threshold::PerUnit(g_t.sum_axis(Axis(0))),
        Threshold::Full(_) => Threshold::Full(g_t),
    };
    (d_mean, d_std, d_threshold)
}

/// Saved state of a convolutional rate layer.
#[derive(Debug, Clone)]
pub struct ConvRateSaved<T> {
    pub stats: ConvStats<T>,
    pub prob: SigmoidProbSaved<T>,
}

/// Convolutional firing probabilities, (batch, out channel, y, x).
///
/// A per-unit threshold is per output channel; a full threshold is indexed (rows = batch·y·x, channel).
pub fn conv_rate_forward<T: Scalar>(
    p: ArrayView4<'_, T>,
    kernel_q: ArrayView2<'_, T>,
    geometry: &ConvGeometry,
    threshold: &Threshold<T>,
    sigma_type: SigmaType,
    params: RateParams,
) -> Result<(Array4<T>, ConvRateSaved<T>)> {
    let stats = layer_stats_conv(p, kernel_q, geometry, sigma_type)?;
    let (flat, prob) = sigmoid_prob_forward(&stats.mean, &stats.std, threshold, params)?;
    Ok((stats.to_nchw(&flat), ConvRateSaved { stats, prob }))
}

/// Gradients `(∂W_q, ∂P_in, ∂θ)` of a convolutional rate layer.
///
/// With `propagate_sigma = false` the drive spread is treated as a constant.
pub fn conv_rate_backward<T: Scalar>(
    grad_out: ArrayView4<'_, T>,
    saved: &ConvRateSaved<T>,
    kernel_q: ArrayView2<'_, T>,
    geometry: &ConvGeometry,
    propagate_sigma: bool,
) -> (Array2<T>, Array4<T>, Threshold<T>) {
    let flat = saved.stats.from_nchw(grad_out);
    let (d_mean, mut d_std, d_t) = sigmoid_prob_backward(flat.view(), &saved.prob);
    if !propagate_sigma {
        d_std.fill(T::zero());
    }
    let (gk, gp) = layer_stats_conv_backward(d_mean.view(), d_std.view(), &saved.stats, kernel_q, geometry);
    (gk, gp, d_t)
}
